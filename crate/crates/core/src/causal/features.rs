use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A variable a monomial can depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Var {
    /// Scalar treatment `a`.
    A,
    /// Treatment `a{i+1}` of a vector treatment.
    Ai(usize),
    /// Coordinate `coord` of proxy view `view` (both 0-based), written
    /// `z{view+1}_{coord}`.
    Z { view: usize, coord: usize },
}

impl Var {
    fn is_treatment(&self) -> bool {
        matches!(self, Var::A | Var::Ai(_))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::A => write!(f, "a"),
            Var::Ai(i) => write!(f, "a{}", i + 1),
            Var::Z { view, coord } => write!(f, "z{}_{}", view + 1, coord),
        }
    }
}

impl FromStr for Var {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown feature variable '{s}'"));
        if s == "a" {
            return Ok(Var::A);
        }
        if let Some(rest) = s.strip_prefix('a') {
            let i: usize = rest.parse().map_err(|_| bad())?;
            return if i >= 1 { Ok(Var::Ai(i - 1)) } else { Err(bad()) };
        }
        if let Some(rest) = s.strip_prefix('z') {
            let (v, c) = rest.split_once('_').ok_or_else(bad)?;
            let view: usize = v.parse().map_err(|_| bad())?;
            let coord: usize = c.parse().map_err(|_| bad())?;
            if !(1..=3).contains(&view) {
                return Err(bad());
            }
            return Ok(Var::Z { view: view - 1, coord });
        }
        Err(bad())
    }
}

/// Product of powers of variables; the empty product is the constant 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    factors: Vec<(Var, u32)>,
}

impl Term {
    pub fn constant() -> Self {
        Self { factors: Vec::new() }
    }

    pub fn var(v: Var) -> Self {
        Self { factors: vec![(v, 1)] }
    }

    /// `(variable, power)` pairs; empty for the constant.
    pub fn factors(&self) -> &[(Var, u32)] {
        &self.factors
    }

    fn product(&self, a: &[f64], z: &[&[f64]], keep: impl Fn(&Var) -> bool) -> f64 {
        self.factors
            .iter()
            .filter(|(v, _)| keep(v))
            .map(|(v, p)| {
                let x = match *v {
                    Var::A => a[0],
                    Var::Ai(i) => a[i],
                    Var::Z { view, coord } => z[view][coord],
                };
                x.powi(*p as i32)
            })
            .product()
    }

    pub fn eval(&self, a: &[f64], z: &[&[f64]]) -> f64 {
        self.product(a, z, |_| true)
    }

    /// Factor that depends on the treatment only.
    pub fn treatment_part(&self, a: &[f64]) -> f64 {
        self.product(a, &[], Var::is_treatment)
    }

    /// Factor that depends on the proxies only.
    pub fn proxy_part(&self, z: &[&[f64]]) -> f64 {
        self.product(&[], z, |v| !v.is_treatment())
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "1");
        }
        for (i, (v, p)) in self.factors.iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            if *p == 1 {
                write!(f, "{v}")?;
            } else {
                write!(f, "{v}^{p}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" {
            return Ok(Self::constant());
        }
        let mut factors = Vec::new();
        for part in s.split('*') {
            let (name, pow) = match part.split_once('^') {
                Some((n, p)) => (
                    n,
                    p.parse::<u32>()
                        .map_err(|_| Error::InvalidConfig(format!("bad exponent in '{part}'")))?,
                ),
                None => (part, 1),
            };
            if pow == 0 {
                return Err(Error::InvalidConfig(format!("zero exponent in '{part}'")));
            }
            factors.push((name.trim().parse()?, pow));
        }
        Ok(Self { factors })
    }
}

/// Ordered list of monomial basis functions of the treatment and proxies,
/// e.g. `1,a,z1_0,z1_1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMap {
    terms: Vec<Term>,
}

impl FeatureMap {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidConfig("feature map needs at least one term".into()));
        }
        Ok(Self { terms })
    }

    /// `z_v` coordinates only, no intercept.
    pub fn proxy_linear(view: usize, d: usize) -> Self {
        Self {
            terms: (0..d).map(|coord| Term::var(Var::Z { view, coord })).collect(),
        }
    }

    /// `[1, z_v]`.
    pub fn intercept_proxy_linear(view: usize, d: usize) -> Self {
        let mut m = Self::proxy_linear(view, d);
        m.terms.insert(0, Term::constant());
        m
    }

    /// `[1, a, z_v]`.
    pub fn treatment_proxy_linear(view: usize, d: usize) -> Self {
        let mut m = Self::intercept_proxy_linear(view, d);
        m.terms.insert(1, Term::var(Var::A));
        m
    }

    /// `[1, a1, ..., a_m]`.
    pub fn treatments_linear(m: usize) -> Self {
        let mut terms = vec![Term::constant()];
        terms.extend((0..m).map(|i| Term::var(Var::Ai(i))));
        Self { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Checks every variable is available for `treatments` treatment
    /// values and proxies of dimension `dim` (`dim = 0` means no proxies).
    pub fn validate(&self, treatments: usize, dim: usize) -> Result<()> {
        for t in &self.terms {
            for (v, _) in &t.factors {
                let ok = match *v {
                    Var::A => treatments == 1,
                    Var::Ai(i) => i < treatments && treatments > 1,
                    Var::Z { coord, .. } => coord < dim,
                };
                if !ok {
                    return Err(Error::InvalidConfig(format!(
                        "feature '{t}' needs a variable this dataset does not have"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], z: &[&[f64]]) -> Vec<f64> {
        self.terms.iter().map(|t| t.eval(a, z)).collect()
    }

    /// Which proxy views any term reads.
    pub fn views_used(&self) -> [bool; 3] {
        let mut used = [false; 3];
        for t in &self.terms {
            for (v, _) in &t.factors {
                if let Var::Z { view, .. } = v {
                    used[*view] = true;
                }
            }
        }
        used
    }

    pub fn depends_on_treatment(&self) -> bool {
        self.terms.iter().any(|t| t.factors.iter().any(|(v, _)| v.is_treatment()))
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.terms.iter().map(Term::to_string).collect()
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_strings().join(","))
    }
}

impl FromStr for FeatureMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s.split(',').map(str::parse).collect::<Result<_>>()?)
    }
}

impl Serialize for FeatureMap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_strings().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        let terms = names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<Term>>>()
            .map_err(serde::de::Error::custom)?;
        FeatureMap::new(terms).map_err(serde::de::Error::custom)
    }
}
