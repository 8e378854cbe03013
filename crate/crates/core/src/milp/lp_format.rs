//! CPLEX LP text export, handy for cross-checking a model in another solver.

use std::fmt::Write as _;

use super::bnb::MilpInstance;
use super::lp::{Relation, Sense};

fn var_name(inst: &MilpInstance, j: usize) -> String {
    inst.lp
        .names
        .as_ref()
        .and_then(|n| n.get(j).cloned())
        .unwrap_or_else(|| format!("x{j}"))
}

fn write_terms(out: &mut String, inst: &MilpInstance, terms: impl Iterator<Item = (usize, f64)>) {
    let mut first = true;
    for (j, a) in terms {
        if a == 0.0 {
            continue;
        }
        let name = var_name(inst, j);
        if first {
            let _ = write!(out, "{a} {name}");
            first = false;
        } else if a < 0.0 {
            let _ = write!(out, " - {} {name}", -a);
        } else {
            let _ = write!(out, " + {a} {name}");
        }
    }
    if first {
        out.push_str("0 x0");
    }
}

pub fn to_lp_string(inst: &MilpInstance) -> String {
    let lp = &inst.lp;
    let mut out = String::new();
    out.push_str(match lp.sense {
        Sense::Maximize => "Maximize\n obj: ",
        Sense::Minimize => "Minimize\n obj: ",
    });
    write_terms(&mut out, inst, lp.objective.iter().copied().enumerate());
    out.push_str("\nSubject To\n");
    for (r, row) in lp.rows.iter().enumerate() {
        let _ = write!(out, " c{r}: ");
        write_terms(&mut out, inst, row.coeffs.iter().copied());
        let rel = match row.relation {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        let _ = writeln!(out, " {rel} {}", row.rhs);
    }
    out.push_str("Bounds\n");
    for j in 0..lp.num_vars() {
        let _ = writeln!(out, " {} <= {} <= {}", lp.lower[j], var_name(inst, j), lp.upper[j]);
    }
    if !inst.binaries.is_empty() {
        out.push_str("Binaries\n");
        for &b in &inst.binaries {
            let _ = writeln!(out, " {}", var_name(inst, b));
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::lp::LpInstance;

    #[test]
    fn writes_sections() {
        let mut lp = LpInstance::new(Sense::Maximize, vec![3.0, -2.0], vec![0.0; 2], vec![1.0; 2]);
        lp.add_row(vec![(0, 1.0), (1, -1.0)], Relation::Le, 1.0);
        let text = to_lp_string(&MilpInstance::new(lp, vec![0]));
        assert!(text.starts_with("Maximize\n obj: 3 x0 - 2 x1\n"));
        assert!(text.contains(" c0: 1 x0 - 1 x1 <= 1\n"));
        assert!(text.contains("Binaries\n x0\n"));
        assert!(text.ends_with("End\n"));
    }
}
