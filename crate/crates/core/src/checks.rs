//! Exact checks of the informativeness witnesses, shared by the CLI and tests.

use crate::environments::{one_step_expected_reward, prop1_mdp, prop2_mdp, prop4_mdp, Environment};
use crate::error::Result;
use crate::inference::{mutual_information_of_policies, policy_mutual_information, DEFAULT_POLICY_TOL};
use crate::mdp::Policy;
use crate::planners::{plan, PlanOptions, PlannerSpec, PolicyCache};

/// Absolute tolerance for the mutual-information equalities.
pub const MI_TOL: f64 = 1e-9;
/// Absolute tolerance for the closed-form Boltzmann action probabilities.
pub const PROB_TOL: f64 = 1e-12;

/// One computed quantity against its target.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub label: String,
    pub computed: f64,
    pub target: f64,
    pub tol: f64,
    /// For inequality checks, `computed` must lie on the right side of `target`.
    pub relation: Relation,
    /// Whether the quantity is information in nats (convertible to bits).
    pub information: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Equal,
    AtLeast,
    AtMost,
}

impl CheckLine {
    fn equal(label: impl Into<String>, computed: f64, target: f64, tol: f64) -> Self {
        Self {
            label: label.into(),
            computed,
            target,
            tol,
            relation: Relation::Equal,
            information: false,
        }
    }

    fn mi(label: impl Into<String>, computed: f64, target: f64) -> Self {
        Self {
            information: true,
            ..Self::equal(label, computed, target, MI_TOL)
        }
    }

    pub fn passed(&self) -> bool {
        match self.relation {
            Relation::Equal => (self.computed - self.target).abs() <= self.tol,
            Relation::AtLeast => self.computed >= self.target - self.tol,
            Relation::AtMost => self.computed <= self.target + self.tol,
        }
    }
}

/// The lines of one construction check.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub lines: Vec<CheckLine>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(CheckLine::passed)
    }

    pub fn failures(&self) -> usize {
        self.lines.iter().filter(|l| !l.passed()).count()
    }
}

fn mi(spec: &PlannerSpec, env: &Environment) -> Result<f64> {
    Ok(policy_mutual_information(
        spec,
        env,
        DEFAULT_POLICY_TOL,
        &PlanOptions::default(),
        &PolicyCache::new(),
    )?
    .mutual_information)
}

/// Rational MI is zero and the enumerating planner reaches |S| log |A|.
pub fn check_prop1(sizes: &[(usize, usize)]) -> Result<CheckReport> {
    let mut report = CheckReport::default();
    for &(ns, na) in sizes {
        let (env, planner) = prop1_mdp(ns, na)?;
        report.lines.push(CheckLine::mi(
            format!("prop1 |S|={ns} |A|={na} rational MI"),
            mi(&PlannerSpec::rational(), &env)?,
            0.0,
        ));
        let policies = planner.policies();
        let refs: Vec<&Policy> = policies.iter().collect();
        let enumerated =
            mutual_information_of_policies(&refs, env.theta.prior(), DEFAULT_POLICY_TOL).mutual_information;
        report.lines.push(CheckLine::mi(
            format!("prop1 |S|={ns} |A|={na} enumerated MI"),
            enumerated,
            ns as f64 * (na as f64).ln(),
        ));
    }
    Ok(report)
}

/// Boltzmann(β) MI is log |Θ|, rational MI is zero, and π(a₁) = σ(βθ).
pub fn check_prop2(sizes: &[usize], beta: f64) -> Result<CheckReport> {
    let mut report = CheckReport::default();
    let boltz = PlannerSpec::boltzmann(beta)?;
    for &n in sizes {
        let env = prop2_mdp(n)?;
        report.lines.push(CheckLine::mi(
            format!("prop2 |Θ|={n} β={beta} Boltzmann MI"),
            mi(&boltz, &env)?,
            (n as f64).ln(),
        ));
        report.lines.push(CheckLine::mi(
            format!("prop2 |Θ|={n} rational MI"),
            mi(&PlannerSpec::rational(), &env)?,
            0.0,
        ));
        let mut worst: f64 = 0.0;
        for (i, theta) in env.theta.params().iter().enumerate() {
            let out = plan(&boltz, &env.mdp, &env.reward, theta, &PlanOptions::default())?;
            let expected = 1.0 / (1.0 + (-beta * (i + 1) as f64).exp());
            worst = worst.max((out.policy.prob(0, 0) - expected).abs());
        }
        report.lines.push(CheckLine::equal(
            format!("prop2 |Θ|={n} max |π(a1) - σ(βθ)|"),
            worst,
            0.0,
            PROB_TOL,
        ));
    }
    Ok(report)
}

/// Every alternative transition model has the sign pattern on E[r], and
/// Boltzmann(1) MI is log |Θ| while rational MI is zero.
pub fn check_prop4(num_thetas: usize) -> Result<CheckReport> {
    let mut report = CheckReport::default();
    let (env, alts) = prop4_mdp(num_thetas)?;
    for (k, alt) in alts.iter().enumerate() {
        let i = (k + 1) as f64;
        let bound = 1.0 / (2.0 * i + 1.0);
        for theta in env.theta.params() {
            for s in 0..2 {
                let e = one_step_expected_reward(alt, &env.reward, theta, s, 1);
                let (target, relation) = if theta[0] >= i {
                    (bound, Relation::AtLeast)
                } else {
                    (-bound, Relation::AtMost)
                };
                report.lines.push(CheckLine {
                    label: format!("prop4 model {} θ={} s={s} E[r]", k + 1, theta[0]),
                    computed: e,
                    target,
                    tol: PROB_TOL,
                    relation,
                    information: false,
                });
            }
        }
    }
    report.lines.push(CheckLine::mi(
        format!("prop4 |Θ|={num_thetas} rational MI"),
        mi(&PlannerSpec::rational(), &env)?,
        0.0,
    ));
    report.lines.push(CheckLine::mi(
        format!("prop4 |Θ|={num_thetas} Boltzmann(1) MI"),
        mi(&PlannerSpec::boltzmann(1.0)?, &env)?,
        (num_thetas as f64).ln(),
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_checks_pass() {
        assert!(check_prop1(&[(3, 2)]).unwrap().passed());
        assert!(check_prop2(&[16], 0.1).unwrap().passed());
        let r = check_prop4(8).unwrap();
        assert!(r.passed());
        assert_eq!(r.lines.len(), 8 * 8 * 2 + 2);
    }

    #[test]
    fn bad_sizes_error() {
        assert!(check_prop1(&[(0, 2)]).is_err());
    }
}
