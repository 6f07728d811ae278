//! Desk study: train on synthetic phantoms, then score held-out ones.
//!
//! `cargo run --release --example study -- [train=N] [test=N] [loc_ens=K] [seg_ens=K] [KEY=VALUE ...]`
//! where any other key is a run-config key such as `seg_lr=0.05`.

use std::process::ExitCode;
use std::time::Instant;

use volseg::study::{run_study, StudyConfig};

fn main() -> ExitCode {
    let mut cfg = StudyConfig::desk();
    for arg in std::env::args().skip(1) {
        let Some((k, v)) = arg.split_once('=') else {
            eprintln!("expected KEY=VALUE, got {arg:?}");
            return ExitCode::from(2);
        };
        let count = |v: &str| v.parse::<usize>().map_err(|e| e.to_string());
        let applied = match k {
            "train" => count(v).map(|n| cfg.train_count = n),
            "test" => count(v).map(|n| cfg.test_count = n),
            "loc_ens" => count(v).map(|n| cfg.loc_ensemble = n),
            "seg_ens" => count(v).map(|n| cfg.seg_ensemble = n),
            _ => cfg.run.set(k, v).map_err(|e| e.to_string()),
        };
        if let Err(e) = applied {
            eprintln!("{k}: {e}");
            return ExitCode::from(2);
        }
    }
    let start = Instant::now();
    let report = match run_study(&cfg, &mut |s| eprintln!("[{:.0}s] {s}", start.elapsed().as_secs_f64())) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    for (i, v) in report.volumes.iter().enumerate() {
        println!("test {i} seed {}: dsc {:.4} containment {:.4}", v.seed, v.dsc, v.containment);
    }
    println!(
        "mean dsc {:.4}, {} failures, {} boxes fully and {} at 95% contained, training {:.0}s, total {:.0}s",
        report.mean_dsc,
        report.failures,
        report.boxes_fully_contained,
        report.boxes_95_contained,
        report.seconds_training,
        report.seconds_total
    );
    ExitCode::SUCCESS
}
