use slicevol_core::latent::{fit_latent_model, LatentSequence};
use slicevol_core::{NormalSource, SplitMix64};

#[test]
fn probe_factor_identity() {
    let (n, t, l_dim) = (3usize, 16usize, 8usize);
    let mut rng = SplitMix64::derive(0xC1, ((n * 1000 + t) * 10 + l_dim) as u64);
    let seqs: Vec<LatentSequence<f64>> = (0..n)
        .map(|_| {
            let mut values = vec![0.0f64; t * l_dim];
            for l in 0..l_dim {
                let scale = 0.5 + 0.25 * l as f64;
                let mut prev = 0.0f64;
                for i in 0..t {
                    prev = 0.8 * prev + scale * rng.next_standard_normal();
                    values[i * l_dim + l] = prev + l as f64;
                }
            }
            LatentSequence::new(t, l_dim, values).unwrap()
        })
        .collect();
    let model = fit_latent_model(&seqs, 0.0).unwrap();
    for l in 0..l_dim {
        let mu: Vec<f64> = (0..t)
            .map(|i| seqs.iter().map(|s| s.value(i, l)).sum::<f64>() / n as f64)
            .collect();
        let w = model.factor(l);
        let r = model.rank(l);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..t {
            for j in 0..t {
                let cov: f64 = seqs
                    .iter()
                    .map(|s| (s.value(i, l) - mu[i]) * (s.value(j, l) - mu[j]))
                    .sum::<f64>()
                    / n as f64;
                let ww: f64 = (0..r).map(|k| w[k * t + i] * w[k * t + j]).sum();
                num += (ww - cov) * (ww - cov);
                den += cov * cov;
            }
        }
        // factor column geometry: w_k = u_k s_k / sqrt(n) with orthonormal u
        let col = |k: usize| -> Vec<f64> { (0..t).map(|i| w[k * t + i]).collect() };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut geom = String::new();
        for k in 0..r {
            for k2 in k..r {
                let d = dot(&col(k), &col(k2));
                geom.push_str(&format!(" w{k}.w{k2}={d:.6e}"));
            }
        }
        let trace_model: f64 = (0..t).map(|i| (0..r).map(|k| w[k * t + i] * w[k * t + i]).sum::<f64>()).sum();
        let trace_oracle: f64 = (0..t)
            .map(|i| {
                seqs.iter().map(|s| (s.value(i, l) - mu[i]).powi(2)).sum::<f64>() / n as f64
            })
            .sum();
        println!(
            "dim {l}: rank {r}, rel {:.3e}, trace model {trace_model:.9} oracle {trace_oracle:.9},{geom}",
            (num / den).sqrt()
        );
    }
}
