//! One line per acceptance criterion: `PASS|FAIL id elapsed / budget detail`.
//! Tolerances and budgets live in `sqbc::verify`; `sqbc verify` prints the
//! same report. Runs without the libtest harness so the lines always show.
//!
//! `kernel_mnist` needs the MNIST IDX files. Without them it is reported as
//! FAIL and does not fail the target; with them it must pass.

use std::process::ExitCode;

use sqbc::experiments::data::bundled_data_dir;
use sqbc::experiments::kernel_mnist::{error_at, load_split, run_arm, KernelArm, KernelSettings};
use sqbc::experiments::median;
use sqbc::verify::{self, criteria, run_criterion};

/// Not a criterion: the kernel pipeline on the bundled 8x8 digits, at a scale
/// that fits the data (1000 train / 400 test, budget 300).
fn kernel_digits_proxy() -> bool {
    let settings =
        KernelSettings { n_train: 1000, n_test: 400, gamma: 0.02, budget: 300, checkpoint_every: 50, ..KernelSettings::default() };
    let dir = bundled_data_dir().join("digits");
    let (mut active, mut random) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let split = load_split(&dir, settings.n_train, settings.n_test, seed).unwrap();
        let a = run_arm(&settings, &split, KernelArm::Active, seed).unwrap();
        let r = run_arm(&settings, &split, KernelArm::Random, seed).unwrap();
        active.push(error_at(&a, 150).unwrap());
        random.push(error_at(&r, 300).unwrap());
    }
    let (a, r) = (median(&active), median(&random));
    println!("INFO kernel_digits_proxy  median active error @150 {a:.4} vs random @300 {r:.4}");
    a < 0.5 && r < 0.5
}

fn main() -> ExitCode {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut ok = true;
    for (id, _, _) in criteria() {
        if !only.is_empty() && !only.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        let r = run_criterion(id).expect("listed criterion");
        println!("{}", r.line());
        let required = id != "kernel_mnist" || verify::mnist_available();
        if required && !r.passed {
            ok = false;
        }
        if !required && r.passed {
            eprintln!("kernel_mnist passed without data: report is inconsistent");
            ok = false;
        }
    }
    if only.is_empty() || only.iter().any(|f| "kernel_digits_proxy".contains(f.as_str())) {
        ok &= kernel_digits_proxy();
    }
    println!("acceptance: {}", if ok { "ok" } else { "FAILED" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
