//! Accuracy of the argmax baseline and of cross-validated kNN across noise levels.
//!
//! cargo run --release -p sonopipe --example sigma_sweep -- [size] [seed]

use sonopipe::features::{argmax_classify, PreparedTemplates};
use sonopipe::frame::Frame;
use sonopipe::pipeline::train::{evaluate, extract_samples, train};
use sonopipe::synth::{Phantom, PhantomSpec};
use sonopipe::templates::{GestureLabel, GestureTemplate, TemplateStore};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let size: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(64);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(42);

    println!("size {size} seed {seed}");
    println!("{:>6} {:>8} {:>8} {:>8}", "sigma", "argmax", "knn", "no-rest");
    for sigma in [0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.6] {
        let spec = PhantomSpec {
            seed,
            width: size,
            height: size,
            noise_sigma: sigma,
            ..PhantomSpec::default()
        };
        let phantom = Phantom::new(spec)?;

        let clean = TemplateStore::new(
            GestureLabel::ALL
                .iter()
                .map(|&l| {
                    Ok(GestureTemplate {
                        label: l,
                        image: phantom.render_clean(l, 1.0)?,
                        n_frames: 1,
                        source_ids: vec![0],
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?,
        )?;
        let prepared = PreparedTemplates::new(&clean)?;
        let probe = phantom.dataset_frames(50)?;
        let hits = probe
            .iter()
            .filter(|(l, f)| argmax_classify(&prepared.extract(f).unwrap()).0 == *l)
            .count();

        let dataset: Vec<(GestureLabel, Frame)> = phantom
            .dataset_frames(20)?
            .into_iter()
            .map(|(l, f)| {
                let q = Frame::from_u8(f.width(), f.height(), &f.to_u8())
                    .unwrap()
                    .with_meta(0, f.seq());
                (l, q)
            })
            .collect();
        let outcome = train(&dataset, 10, 3, "synthetic")?;
        let samples = extract_samples(&dataset, &outcome.store, "synthetic")?;
        let report = evaluate(&samples, 3, 5, seed)?;
        println!(
            "{sigma:>6} {:>8.3} {:>8.3} {:>8.3}",
            hits as f64 / probe.len() as f64,
            report.full.accuracy,
            report.rest_excluded.accuracy
        );
    }
    Ok(())
}
