//! Finite-difference audit of the analytic gradients: every graph op,
//! the full model under each variant, and the three ranking losses. Any
//! relative error at or above the tolerance is an invariant violation.

use hoprank_neural::diagnostics::{loss_grad_checks, model_grad_check, op_grad_checks};
use hoprank_neural::encoder::Variant;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest;

use super::{write_kv, Workspace};

pub const TOLERANCE: f64 = 1e-4;

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let ws = Workspace::new(cfg);
    ws.ensure_dir()?;
    ws.write_resolved_config()?;

    let mut kv: Vec<(String, String)> = Vec::new();
    let mut failures = Vec::new();
    println!("{:<24} {:>12}  status", "check", "max rel err");

    for check in op_grad_checks() {
        record(
            &format!("op.{}", check.name),
            check.max_rel_err,
            &mut kv,
            &mut failures,
            "",
        );
    }
    for variant in [Variant::Isolated, Variant::LstmAfter, Variant::Lit] {
        let report = model_grad_check(variant, cfg.seed);
        let name = format!("model.{variant}");
        record(
            &name,
            report.max_rel_err,
            &mut kv,
            &mut failures,
            &format!(
                "worst {}[{}] over {} coords",
                report.worst_param, report.worst_coord, report.coords_checked
            ),
        );
    }
    for check in loss_grad_checks() {
        record(
            &format!("loss.{}", check.name),
            check.max_rel_err,
            &mut kv,
            &mut failures,
            "",
        );
    }

    let out = ws.path("gradcheck.kv");
    write_kv(&out, &kv)?;
    manifest::stamp(&out, "gradcheck", cfg)?;

    if failures.is_empty() {
        println!("all gradients within {TOLERANCE:e}");
        Ok(())
    } else {
        Err(CliError::Invariant(format!(
            "gradient check failed: {}",
            failures.join(", ")
        )))
    }
}

fn record(
    name: &str,
    err: f64,
    kv: &mut Vec<(String, String)>,
    failures: &mut Vec<String>,
    detail: &str,
) {
    let ok = err < TOLERANCE;
    println!(
        "{name:<24} {err:>12.3e}  {} {detail}",
        if ok { "ok" } else { "FAIL" }
    );
    kv.push((name.to_string(), format!("{err:.6e}")));
    if !ok {
        failures.push(format!("{name} at {err:.3e}"));
    }
}
