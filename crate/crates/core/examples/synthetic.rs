//! Clusters synthetic Gaussian data over several seeds and prints CA/NMI.
//!
//! `cargo run --release --example synthetic -- [identity] [standardize]`

use std::time::Instant;

use ntclust::data_io::{standardize, synth_clusters};
use ntclust::metrics::{cluster_accuracy, nmi, Partition};
use ntclust::{fit, HyperParams};

fn main() -> ntclust::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let identity = args.iter().any(|a| a == "identity");
    let normalize = args.iter().any(|a| a == "standardize");
    for seed in 0..5 {
        let (x, truth) = synth_clusters(4, 10, 50, 1.0, seed)?;
        let x = if normalize { standardize(&x)? } else { x };
        let hyper = HyperParams {
            m: 40,
            iterations: 50,
            c_d: 4,
            c_s: 2,
            seed,
            identity,
            ..HyperParams::default()
        };
        let start = Instant::now();
        let out = fit(&x, &hyper, None)?;
        let pred = Partition::new(
            out.assignments
                .iter()
                .map(|a| a.dissimilarity_label())
                .collect(),
        )?;
        println!(
            "seed {seed}: CA={:.4} NMI={:.4} objective={:.4e} iterations={} {:.2}s",
            cluster_accuracy(&pred, &truth)?,
            nmi(&pred, &truth)?,
            out.report.final_objective(),
            out.report.objectives.len(),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
