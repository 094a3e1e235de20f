use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pathology {
    Ventriculomegaly,
    CerebellarHypoplasia,
    PontocerebellarHypoplasia,
    Microcephaly,
}

impl Pathology {
    /// Fixed order used for sampling and reporting.
    pub const ALL: [Pathology; 4] = [
        Pathology::Ventriculomegaly,
        Pathology::CerebellarHypoplasia,
        Pathology::PontocerebellarHypoplasia,
        Pathology::Microcephaly,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Pathology::Ventriculomegaly => "vm",
            Pathology::CerebellarHypoplasia => "ch",
            Pathology::PontocerebellarHypoplasia => "pch",
            Pathology::Microcephaly => "mc",
        }
    }
}

impl fmt::Display for Pathology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pathology::Ventriculomegaly => "ventriculomegaly",
            Pathology::CerebellarHypoplasia => "cerebellar-hypoplasia",
            Pathology::PontocerebellarHypoplasia => "pontocerebellar-hypoplasia",
            Pathology::Microcephaly => "microcephaly",
        })
    }
}

impl FromStr for Pathology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Pathology::ALL
            .into_iter()
            .find(|p| p.short_name() == s || p.to_string() == s)
            .ok_or_else(|| Error::InvalidPlan(format!("unknown pathology `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    #[default]
    Symmetric,
    Asymmetric,
}

/// Severity in [0, 1] per pathology; 0 for pathologies not in the plan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Severities {
    pub ventriculomegaly: f64,
    pub cerebellar_hypoplasia: f64,
    pub pontocerebellar_hypoplasia: f64,
    pub microcephaly: f64,
}

impl Severities {
    pub fn get(&self, p: Pathology) -> f64 {
        match p {
            Pathology::Ventriculomegaly => self.ventriculomegaly,
            Pathology::CerebellarHypoplasia => self.cerebellar_hypoplasia,
            Pathology::PontocerebellarHypoplasia => self.pontocerebellar_hypoplasia,
            Pathology::Microcephaly => self.microcephaly,
        }
    }

    pub fn set(&mut self, p: Pathology, value: f64) {
        *match p {
            Pathology::Ventriculomegaly => &mut self.ventriculomegaly,
            Pathology::CerebellarHypoplasia => &mut self.cerebellar_hypoplasia,
            Pathology::PontocerebellarHypoplasia => &mut self.pontocerebellar_hypoplasia,
            Pathology::Microcephaly => &mut self.microcephaly,
        } = value;
    }
}

/// Which pathologies to simulate and how strongly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathologyPlan {
    pub ventriculomegaly: bool,
    #[serde(default)]
    pub vm_symmetry: Symmetry,
    /// Dilation steps per hemisphere (left, right); chosen at apply time
    /// when absent.
    #[serde(default)]
    pub vm_iterations: Option<[usize; 2]>,
    pub cerebellar_hypoplasia: bool,
    pub pontocerebellar_hypoplasia: bool,
    pub microcephaly: bool,
    #[serde(default)]
    pub severities: Severities,
    pub seed: u64,
    /// The pathology drawn first, when the plan was sampled.
    #[serde(default)]
    pub primary: Option<Pathology>,
}

impl PathologyPlan {
    /// A plan with the given pathologies at one severity. Microcephaly
    /// brings in ventriculomegaly.
    pub fn with(pathologies: &[Pathology], severity: f64, seed: u64) -> Result<Self> {
        let mut plan = Self {
            ventriculomegaly: false,
            vm_symmetry: Symmetry::Symmetric,
            vm_iterations: None,
            cerebellar_hypoplasia: false,
            pontocerebellar_hypoplasia: false,
            microcephaly: false,
            severities: Severities::default(),
            seed,
            primary: pathologies.first().copied(),
        };
        for &p in pathologies {
            plan.set(p, true);
        }
        if plan.microcephaly {
            plan.ventriculomegaly = true;
        }
        for p in plan.pathologies() {
            plan.severities.set(p, severity);
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn contains(&self, p: Pathology) -> bool {
        match p {
            Pathology::Ventriculomegaly => self.ventriculomegaly,
            Pathology::CerebellarHypoplasia => self.cerebellar_hypoplasia,
            Pathology::PontocerebellarHypoplasia => self.pontocerebellar_hypoplasia,
            Pathology::Microcephaly => self.microcephaly,
        }
    }

    fn set(&mut self, p: Pathology, on: bool) {
        *match p {
            Pathology::Ventriculomegaly => &mut self.ventriculomegaly,
            Pathology::CerebellarHypoplasia => &mut self.cerebellar_hypoplasia,
            Pathology::PontocerebellarHypoplasia => &mut self.pontocerebellar_hypoplasia,
            Pathology::Microcephaly => &mut self.microcephaly,
        } = on;
    }

    /// Pathologies in the plan, in the fixed order.
    pub fn pathologies(&self) -> Vec<Pathology> {
        Pathology::ALL.into_iter().filter(|&p| self.contains(p)).collect()
    }

    pub fn severity(&self, p: Pathology) -> f64 {
        self.severities.get(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pathologies().is_empty() {
            return Err(Error::InvalidPlan("no pathology selected".into()));
        }
        if self.cerebellar_hypoplasia && self.pontocerebellar_hypoplasia {
            return Err(Error::InvalidPlan(
                "cerebellar and pontocerebellar hypoplasia are mutually exclusive".into(),
            ));
        }
        if self.microcephaly && !self.ventriculomegaly {
            return Err(Error::InvalidPlan("microcephaly requires ventriculomegaly".into()));
        }
        for p in Pathology::ALL {
            let s = self.severity(p);
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Severity(s));
            }
        }
        Ok(())
    }

    /// Draw a plan from `seed`.
    ///
    /// One pathology is chosen uniformly; each pathology is then added with
    /// probability 1/2 in the fixed order, skipping hypoplasia types that
    /// conflict with one already present. Microcephaly forces
    /// ventriculomegaly. The same number of draws is consumed whatever the
    /// outcome, so every field depends on the seed alone.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = Pathology::ALL[rng.random_range(0..Pathology::ALL.len())];
        let mut plan = Self {
            ventriculomegaly: false,
            vm_symmetry: Symmetry::Symmetric,
            vm_iterations: None,
            cerebellar_hypoplasia: false,
            pontocerebellar_hypoplasia: false,
            microcephaly: false,
            severities: Severities::default(),
            seed,
            primary: Some(first),
        };
        plan.set(first, true);
        for p in Pathology::ALL {
            let coin = rng.random_bool(0.5);
            let blocked = match p {
                Pathology::CerebellarHypoplasia => plan.pontocerebellar_hypoplasia,
                Pathology::PontocerebellarHypoplasia => plan.cerebellar_hypoplasia,
                _ => false,
            };
            if coin && !blocked {
                plan.set(p, true);
            }
        }
        if plan.microcephaly {
            plan.ventriculomegaly = true;
        }
        let asymmetric = rng.random_bool(0.5);
        if plan.ventriculomegaly && asymmetric {
            plan.vm_symmetry = Symmetry::Asymmetric;
        }
        for p in Pathology::ALL {
            let s: f64 = rng.random();
            if plan.contains(p) {
                plan.severities.set(p, s);
            }
        }
        plan
    }

    /// Apply user overrides on top of this plan.
    pub fn overridden(&self, o: &PlanOverride) -> Result<Self> {
        let mut plan = self.clone();
        if let Some(set) = &o.pathologies {
            let previous = plan.severities;
            plan = Self::with(set, 0.0, self.seed)?;
            plan.vm_symmetry = self.vm_symmetry;
            for p in plan.pathologies() {
                let s = if self.contains(p) { previous.get(p) } else { 0.5 };
                plan.severities.set(p, s);
            }
        }
        if let Some(s) = o.severity {
            for p in plan.pathologies() {
                plan.severities.set(p, s);
            }
        }
        if let Some(sym) = o.symmetry {
            plan.vm_symmetry = sym;
        }
        if o.vm_iterations.is_some() {
            plan.vm_iterations = o.vm_iterations;
        }
        plan.validate()?;
        Ok(plan)
    }
}

/// Forced choices layered over sampled plans.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanOverride {
    /// Replace the sampled pathology set. Pathologies newly switched on get
    /// severity 0.5 unless `severity` is also given.
    pub pathologies: Option<Vec<Pathology>>,
    pub severity: Option<f64>,
    pub symmetry: Option<Symmetry>,
    pub vm_iterations: Option<[usize; 2]>,
}

impl PlanOverride {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    /// Parse a comma-separated list such as `vm,pch`.
    pub fn parse_pathologies(list: &str) -> Result<Vec<Pathology>> {
        list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sampled_plans_are_reproducible() {
        assert_eq!(PathologyPlan::sample(42), PathologyPlan::sample(42));
        let distinct: std::collections::HashSet<String> = (0..64)
            .map(|s| serde_json::to_string(&PathologyPlan::sample(s)).unwrap())
            .collect();
        assert!(distinct.len() > 32);
    }

    #[test]
    fn frequencies() {
        let n = 40_000u64;
        let mut first = [0usize; 4];
        let (mut vm, mut sym) = (0usize, 0usize);
        for s in 0..n {
            let p = PathologyPlan::sample(s);
            first[Pathology::ALL.iter().position(|&q| Some(q) == p.primary).unwrap()] += 1;
            if p.ventriculomegaly {
                vm += 1;
                sym += usize::from(p.vm_symmetry == Symmetry::Symmetric);
            }
        }
        for c in first {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01, "{first:?}");
        }
        assert!((sym as f64 / vm as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn explicit_plans() {
        let p = PathologyPlan::with(&[Pathology::Microcephaly], 0.3, 1).unwrap();
        assert!(p.ventriculomegaly && p.microcephaly);
        assert_eq!(p.severities.ventriculomegaly, 0.3);
        assert!(PathologyPlan::with(&[], 0.3, 1).is_err());
        assert!(PathologyPlan::with(
            &[Pathology::CerebellarHypoplasia, Pathology::PontocerebellarHypoplasia],
            0.3,
            1
        )
        .is_err());
        assert!(matches!(
            PathologyPlan::with(&[Pathology::Ventriculomegaly], 1.5, 1),
            Err(Error::Severity(_))
        ));
    }

    #[test]
    fn overrides() {
        let base = PathologyPlan::sample(9);
        let o = PlanOverride {
            pathologies: Some(PlanOverride::parse_pathologies("pch, vm").unwrap()),
            severity: Some(1.0),
            symmetry: Some(Symmetry::Asymmetric),
            vm_iterations: None,
        };
        let p = base.overridden(&o).unwrap();
        assert_eq!(p.pathologies(), vec![Pathology::Ventriculomegaly, Pathology::PontocerebellarHypoplasia]);
        assert_eq!(p.severity(Pathology::PontocerebellarHypoplasia), 1.0);
        assert_eq!(p.vm_symmetry, Symmetry::Asymmetric);
        assert_eq!(p.seed, 9);
        assert!(PlanOverride::parse_pathologies("vm,xx").is_err());
        assert_eq!(base.overridden(&PlanOverride::default()).unwrap(), base);
    }

    #[test]
    fn json_round_trip() {
        let p = PathologyPlan::sample(77);
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<PathologyPlan>(&text).unwrap(), p);
    }

    proptest! {
        #[test]
        fn sampled_plans_satisfy_invariants(seed in any::<u64>()) {
            let p = PathologyPlan::sample(seed);
            prop_assert!(p.validate().is_ok());
            prop_assert!(!(p.cerebellar_hypoplasia && p.pontocerebellar_hypoplasia));
            prop_assert!(!p.microcephaly || p.ventriculomegaly);
            prop_assert!(p.primary.is_some_and(|q| p.contains(q)));
            for q in Pathology::ALL {
                prop_assert!((0.0..1.0).contains(&p.severity(q)));
                if !p.contains(q) {
                    prop_assert_eq!(p.severity(q), 0.0);
                }
            }
        }
    }
}
