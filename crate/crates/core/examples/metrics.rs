//! SI-SDR, ESTOI and energy retention on a degraded synthetic utterance.

use jnf::corpus::SyntheticCorpus;
use jnf::metrics::{energy_retention, estoi, si_sdr, MetricReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> jnf::Result<()> {
    let clean = SyntheticCorpus::default().utterance(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sdrs = Vec::new();
    for snr_db in [-5.0, 0.0, 5.0, 10.0, 20.0] {
        let p = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
        let noise = Normal::new(0.0, (p / 10f64.powf(snr_db / 10.0)).sqrt()).unwrap();
        let noisy: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let sdr = si_sdr(&noisy, &clean)?;
        sdrs.push(sdr);
        println!(
            "SNR {snr_db:>5.1} dB: SI-SDR {sdr:+6.2} dB, ESTOI {:.3}",
            estoi(&noisy, &clean, 16_000)?
        );
    }
    let r = MetricReport::from_values(sdrs);
    println!("mean SI-SDR {:.2} ± {:.2} dB", r.mean, r.ci95);
    let half: Vec<f64> = clean.iter().map(|v| 0.5 * v).collect();
    println!("half amplitude keeps {:.2} of the energy", energy_retention(&half, &clean)?);
    Ok(())
}
