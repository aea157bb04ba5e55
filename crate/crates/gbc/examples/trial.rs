use gbc::harness::*;

fn main() {
    let t0 = std::time::Instant::now();
    let cfg = ExperimentConfig {
        name: "curve-trial".into(),
        manifold: "torus3".into(), ensemble: "torus3_trig".into(),
        seed: 13, samples: 300, form: "curvemix".into(), resolution: 32,
        ..Default::default()
    };
    let r = run(&cfg).unwrap();
    println!("curve: mean {:.4} +- {:.4} | rhs_kr {:.5} rhs_euler {:.5} | pass {} discards {} | {:.1}s",
        r.mean, r.stderr, r.rhs_kacrice, r.rhs_euler.unwrap(), r.pass, r.discarded.len(), t0.elapsed().as_secs_f64());

    for amp in [0.0f64, 0.5, 1.0, 2.0] {
        let cfg = ExperimentConfig {
            name: format!("drift-{amp}"),
            manifold: "torus2".into(), ensemble: "torus2_flat_trig".into(),
            seed: 17, samples: 2000, form: "cosx1_cosx2".into(),
            drift: "sinsin".into(), drift_amplitude: amp, resolution: 100,
            ..Default::default()
        };
        let t1 = std::time::Instant::now();
        let r = run(&cfg).unwrap();
        println!("drift {}: mean {:.4} +- {:.4} | rhs_kr {:.5} | pass {} discards {} | {:.1}s",
            amp, r.mean, r.stderr, r.rhs_kacrice, r.pass, r.discarded.len(), t1.elapsed().as_secs_f64());
    }
}
