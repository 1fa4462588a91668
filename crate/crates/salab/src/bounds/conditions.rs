use serde::{Deserialize, Serialize};

/// One itemised requirement on `(α, h)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionClause {
    pub name: String,
    /// Observed quantity.
    pub value: f64,
    /// Threshold it is compared with.
    pub threshold: f64,
    /// `"<"`, `"<="`, `">"` or `">="`.
    pub relation: String,
    pub pass: bool,
    /// Distance to the threshold, positive when satisfied.
    pub margin: f64,
    /// Whether the clause gates the bound (informational clauses do not).
    pub gating: bool,
}

impl ConditionClause {
    pub(crate) fn new(name: &str, value: f64, relation: &str, threshold: f64, gating: bool) -> Self {
        let (pass, margin) = match relation {
            "<" => (value < threshold, threshold - value),
            "<=" => (value <= threshold, threshold - value),
            ">" => (value > threshold, value - threshold),
            ">=" => (value >= threshold, value - threshold),
            _ => unreachable!("unknown relation {relation}"),
        };
        ConditionClause { name: name.into(), value, threshold, relation: relation.into(), pass, margin, gating }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub clauses: Vec<ConditionClause>,
}

impl ConditionReport {
    /// All gating clauses hold.
    pub fn passed(&self) -> bool {
        self.clauses.iter().filter(|c| c.gating).all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&ConditionClause> {
        self.clauses.iter().filter(|c| c.gating && !c.pass).collect()
    }

    pub fn summary(&self) -> String {
        self.clauses
            .iter()
            .map(|c| {
                format!(
                    "{}: {} {} {} [{}]",
                    c.name,
                    c.value,
                    c.relation,
                    c.threshold,
                    if c.pass { "ok" } else if c.gating { "FAIL" } else { "info" }
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn clause(&self, name: &str) -> Option<&ConditionClause> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_boundary_fails_with_zero_margin() {
        let c = ConditionClause::new("alpha > 2/D0", 2.0, ">", 2.0, true);
        assert!(!c.pass);
        assert_eq!(c.margin, 0.0);
        let r = ConditionReport { clauses: vec![c, ConditionClause::new("info", 1.0, "<", 0.0, false)] };
        assert!(!r.passed());
        assert_eq!(r.failures().len(), 1);
    }
}
