//! Free-format MPS export, mainly for handing programs to external solvers.

use alloc::format;
use alloc::string::String;
use core::fmt::Write;

use super::LinearProgram;

/// Renders `lp` as free MPS. Rows are `R<i>` (all equalities), the objective
/// row is `COST`, and numbers use shortest round-trip formatting so nothing is
/// lost on reload.
pub fn write_mps(lp: &LinearProgram, name: &str) -> String {
    let mut out = String::new();
    let name = if name.is_empty() { "LP" } else { name };
    let _ = writeln!(out, "NAME {name}");
    out.push_str("ROWS\n N COST\n");
    for r in 0..lp.num_rows() {
        let _ = writeln!(out, " E R{r}");
    }
    out.push_str("COLUMNS\n");
    for j in 0..lp.num_variables() {
        let col = column_name(lp, j);
        let c = lp.objective()[j];
        if c != 0.0 {
            let _ = writeln!(out, " {col} COST {c:?}");
        }
        for &(r, a) in lp.column(j) {
            let _ = writeln!(out, " {col} R{r} {a:?}");
        }
        if c == 0.0 && lp.column(j).is_empty() {
            // keep the column visible to readers that drop unmentioned names
            let _ = writeln!(out, " {col} COST 0.0");
        }
    }
    out.push_str("RHS\n");
    for (r, &b) in lp.rhs().iter().enumerate() {
        if b != 0.0 {
            let _ = writeln!(out, " RHS R{r} {b:?}");
        }
    }
    out.push_str("BOUNDS\n");
    for j in 0..lp.num_variables() {
        let col = column_name(lp, j);
        let (lo, hi) = (lp.lower()[j], lp.upper()[j]);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) if lo == hi => {
                let _ = writeln!(out, " FX BND {col} {lo:?}");
            }
            (true, true) => {
                if lo != 0.0 {
                    let _ = writeln!(out, " LO BND {col} {lo:?}");
                }
                let _ = writeln!(out, " UP BND {col} {hi:?}");
            }
            (true, false) => {
                if lo != 0.0 {
                    let _ = writeln!(out, " LO BND {col} {lo:?}");
                }
            }
            (false, true) => {
                let _ = writeln!(out, " MI BND {col}");
                let _ = writeln!(out, " UP BND {col} {hi:?}");
            }
            (false, false) => {
                let _ = writeln!(out, " FR BND {col}");
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}

fn column_name(lp: &LinearProgram, j: usize) -> String {
    match lp.name(j) {
        Some(n) if !n.is_empty() && !n.contains(char::is_whitespace) => String::from(n),
        _ => format!("z{j}"),
    }
}
