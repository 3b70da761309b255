//! The command pipeline through the library: simulate, evaluate, and re-run from the manifest.

use jnf::harness::{cmd_evaluate, cmd_simulate, resolve_config, HarnessConfig, Method, Overrides, SplitSizes, MANIFEST_FILE};

fn main() -> jnf::Result<()> {
    let root = std::env::temp_dir().join("jnf_pipeline_example");
    let _ = std::fs::remove_dir_all(&root);

    let mut cfg = HarnessConfig::default();
    cfg.splits = SplitSizes { train: 2, val: 1, test: 3 };
    cfg.corpus.synthetic.utterances = 24;
    cmd_simulate(&cfg, &root.join("data"))?;

    cfg.dataset = Some(root.join("data"));
    for method in [Method::Noisy, Method::OracleMvdr, Method::OracleCirm] {
        cfg.method = method;
        let run = cmd_evaluate(&cfg, &root.join(method.name()))?;
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(root.join(method.name()).join("summary.json"))?)?;
        println!(
            "{:<12} ΔSI-SDR {:+.2} dB, ESTOI {:.3}  ({} outputs)",
            method.name(),
            summary["delta_si_sdr"]["mean"].as_f64().unwrap_or(f64::NAN),
            summary["estoi"]["mean"].as_f64().unwrap_or(f64::NAN),
            run.outputs.len()
        );
    }

    let again = resolve_config(Some(&root.join("oracle-cirm").join(MANIFEST_FILE)), &Overrides::default())?;
    let rerun = cmd_evaluate(&again, &root.join("rerun"))?;
    let first = jnf::harness::RunManifest::load(&root.join("oracle-cirm").join(MANIFEST_FILE))?;
    let same = first.stable_outputs().iter().zip(rerun.stable_outputs()).all(|(a, b)| a.sha256 == b.sha256);
    println!("re-run reproduces outputs: {same}");
    Ok(())
}
