//! Composition pilot: sorts the default synthetic stack for a range of seeds
//! and reports kept-set composition for the mixture sorter and the global-PCA
//! baseline at equal kept counts.
//!
//! cargo run --release -p subsort-core --example pilot -- [seeds] [n]

use std::time::Instant;

use subsort_core::io::synthetic::{generate_synthetic, SyntheticSpec};
use subsort_core::{run_sort, spca_sort, EmConfig, Label, SortConfig, SortManifest};

fn composition(manifest: &SortManifest, labels: &[Label]) -> (f64, f64, f64) {
    let kept = manifest.kept_indices();
    let count = |l: Label| kept.iter().filter(|&&i| labels[i] == l).count() as f64;
    let n = kept.len() as f64;
    (
        100.0 * count(Label::Particle) / n,
        100.0 * count(Label::Outlier) / n,
        100.0 * count(Label::PureNoise) / n,
    )
}

fn main() {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(10);
    let n: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(12_000);
    println!("seed  ours(part/out/noise)      spca(part/out/noise)      iters  secs");
    for seed in 0..seeds {
        let spec = SyntheticSpec {
            n,
            seed,
            ..SyntheticSpec::default()
        };
        let synth = generate_synthetic(&spec).unwrap();
        let labels = synth.dataset.labels().unwrap().to_vec();
        let target = spec.class_counts().0;
        let start = Instant::now();
        let em = EmConfig {
            seed,
            ..EmConfig::default()
        };
        let sort = SortConfig {
            target_keep: Some(target),
            ..SortConfig::default()
        };
        let outcome = run_sort(&synth.dataset, 3, 60, &em, &sort).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let ours = composition(&outcome.manifest, &labels);
        let base = composition(&spca_sort(&synth.dataset, 60, target).unwrap(), &labels);
        println!(
            "{seed:>4}  {:6.2} {:6.2} {:6.2}      {:6.2} {:6.2} {:6.2}      {:>5}  {secs:.1}",
            ours.0,
            ours.1,
            ours.2,
            base.0,
            base.1,
            base.2,
            outcome.trace.records.len() - 1
        );
    }
}
