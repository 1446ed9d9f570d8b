//! Finite-difference check of every backward pass, in both precisions.

use gpunet::checks::{run_scope, tolerance, Scope};
use gpunet::engine::gradcheck::GradReport;
use gpunet::DType;

fn show(scope: Scope, dtype: DType, reports: &[GradReport]) {
    let tol = tolerance(scope, dtype);
    println!("{scope:?} / {} (tolerance {tol:e})", dtype.name());
    for r in reports {
        let verdict = if r.passed(tol) { "ok" } else { "FAIL" };
        println!("  {:<28} {:>10.2e}  {verdict}", r.op, r.worst());
    }
}

fn main() -> gpunet::Result<()> {
    for scope in [Scope::Primitives, Scope::Blocks, Scope::Model] {
        show(scope, DType::F64, &run_scope::<f64>(scope, 0, false)?);
        show(scope, DType::F32, &run_scope::<f32>(scope, 0, false)?);
    }
    Ok(())
}
