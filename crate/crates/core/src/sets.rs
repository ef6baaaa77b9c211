//! Membership oracles.
//!
//! The estimator only ever learns about a truncation set through
//! [`MembershipOracle::contains`], one point at a time. Every call is counted
//! by the set wrapper itself, so the number of oracle queries an estimate
//! consumed can be read back from the set after the fact.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{AffineMap, GaussianParams};
use crate::rng::RngStream;
use crate::sampling::GaussianSampler;

/// Maximum nesting depth of a [`SetSpec`] tree.
pub const MAX_SET_DEPTH: usize = 32;

pub trait MembershipOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// Indicator of `x` in the set. Counts as one query.
    fn contains(&self, x: &DVector<f64>) -> Result<bool>;

    /// Number of `contains` calls answered so far.
    fn queries(&self) -> u64;
}

impl<S: MembershipOracle + ?Sized> MembershipOracle for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        (**self).contains(x)
    }

    fn queries(&self) -> u64 {
        (**self).queries()
    }
}

impl<S: MembershipOracle + ?Sized> MembershipOracle for Arc<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        (**self).contains(x)
    }

    fn queries(&self) -> u64 {
        (**self).queries()
    }
}

/// Serializable description of a concrete set. Boundaries are closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    #[serde(rename = "box")]
    AxisBox { lo: Vec<f64>, hi: Vec<f64> },
    /// `{ x : x . normal >= offset }`
    Halfspace { normal: Vec<f64>, offset: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    Union { parts: Vec<SetSpec> },
    Intersection { parts: Vec<SetSpec> },
    Complement { part: Box<SetSpec> },
    FullSpace { dim: usize },
}

impl SetSpec {
    /// Checks geometry and nesting, returning the ambient dimension.
    pub fn validate(&self) -> Result<usize> {
        self.validate_at(1)
    }

    fn validate_at(&self, depth: usize) -> Result<usize> {
        if depth > MAX_SET_DEPTH {
            return Err(Error::Validation(format!("set nesting deeper than {MAX_SET_DEPTH}")));
        }
        let finite = |v: &[f64], what: &str| {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(Error::Validation(format!("{what} has non-finite entries")))
            }
        };
        let dim = match self {
            SetSpec::AxisBox { lo, hi } => {
                Error::check_dim(lo.len(), hi.len())?;
                finite(lo, "box lo")?;
                finite(hi, "box hi")?;
                if let Some(i) = (0..lo.len()).find(|&i| lo[i] > hi[i]) {
                    return Err(Error::Validation(format!(
                        "box lo[{i}] = {} exceeds hi[{i}] = {}",
                        lo[i], hi[i]
                    )));
                }
                lo.len()
            }
            SetSpec::Halfspace { normal, offset } => {
                finite(normal, "halfspace normal")?;
                if !offset.is_finite() {
                    return Err(Error::Validation("halfspace offset is not finite".into()));
                }
                normal.len()
            }
            SetSpec::Ball { center, radius } => {
                finite(center, "ball center")?;
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::Validation(format!("ball radius must be positive, got {radius}")));
                }
                center.len()
            }
            SetSpec::Union { parts } | SetSpec::Intersection { parts } => {
                let first = parts
                    .first()
                    .ok_or_else(|| Error::Validation("union/intersection needs at least one part".into()))?
                    .validate_at(depth + 1)?;
                for p in &parts[1..] {
                    Error::check_dim(first, p.validate_at(depth + 1)?)?;
                }
                first
            }
            SetSpec::Complement { part } => part.validate_at(depth + 1)?,
            SetSpec::FullSpace { dim } => *dim,
        };
        if dim == 0 {
            return Err(Error::Validation("set dimension must be positive".into()));
        }
        Ok(dim)
    }

    /// Pure membership test; assumes a validated spec and matching dimension.
    pub fn contains_point(&self, x: &[f64]) -> bool {
        match self {
            SetSpec::AxisBox { lo, hi } => x.iter().zip(lo).zip(hi).all(|((v, l), h)| l <= v && v <= h),
            SetSpec::Halfspace { normal, offset } => {
                normal.iter().zip(x).map(|(n, v)| n * v).sum::<f64>() >= *offset
            }
            SetSpec::Ball { center, radius } => {
                center.iter().zip(x).map(|(c, v)| (v - c) * (v - c)).sum::<f64>() <= radius * radius
            }
            SetSpec::Union { parts } => parts.iter().any(|p| p.contains_point(x)),
            SetSpec::Intersection { parts } => parts.iter().all(|p| p.contains_point(x)),
            SetSpec::Complement { part } => !part.contains_point(x),
            SetSpec::FullSpace { .. } => true,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("set specs always serialize")
    }
}

type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

#[derive(Clone)]
enum Region {
    Spec(SetSpec),
    Custom(Predicate),
}

/// A membership oracle with a query counter.
pub struct TruncationSet {
    region: Region,
    dim: usize,
    queries: AtomicU64,
}

impl std::fmt::Debug for TruncationSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = f.debug_struct("TruncationSet");
        match &self.region {
            Region::Spec(spec) => s.field("spec", spec),
            Region::Custom(_) => s.field("spec", &"<custom predicate>"),
        };
        s.field("dim", &self.dim).field("queries", &self.queries()).finish()
    }
}

impl TruncationSet {
    pub fn new(spec: SetSpec) -> Result<Self> {
        let dim = spec.validate()?;
        Ok(TruncationSet { region: Region::Spec(spec), dim, queries: AtomicU64::new(0) })
    }

    /// Wraps an arbitrary pure predicate.
    pub fn from_predicate<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        TruncationSet { region: Region::Custom(Arc::new(f)), dim, queries: AtomicU64::new(0) }
    }

    pub fn full_space(dim: usize) -> Self {
        Self::new(SetSpec::FullSpace { dim }).expect("positive dimension")
    }

    pub fn spec(&self) -> Option<&SetSpec> {
        match &self.region {
            Region::Spec(s) => Some(s),
            Region::Custom(_) => None,
        }
    }

    /// A fresh set with the same region and a zeroed counter.
    pub fn fresh_copy(&self) -> TruncationSet {
        TruncationSet { region: self.region.clone(), dim: self.dim, queries: AtomicU64::new(0) }
    }
}

impl MembershipOracle for TruncationSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        Error::check_dim(self.dim, x.len())?;
        self.queries.fetch_add(1, Ordering::Relaxed);
        Ok(match &self.region {
            Region::Spec(s) => s.contains_point(x.as_slice()),
            Region::Custom(f) => f(x.as_slice()),
        })
    }

    fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }
}

/// The set `{ x : map(x) in inner }`.
///
/// Each outer query issues exactly one query to `inner`.
#[derive(Debug)]
pub struct TransformedSet<S> {
    inner: S,
    map: AffineMap,
    queries: AtomicU64,
}

impl<S: MembershipOracle> TransformedSet<S> {
    pub fn new(inner: S, map: AffineMap) -> Result<Self> {
        Error::check_dim(inner.dim(), map.dim())?;
        Ok(TransformedSet { inner, map, queries: AtomicU64::new(0) })
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn map(&self) -> &AffineMap {
        &self.map
    }
}

impl<S: MembershipOracle> MembershipOracle for TransformedSet<S> {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        Error::check_dim(self.dim(), x.len())?;
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.inner.contains(&self.map.apply(x))
    }

    fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }
}

/// Fraction of `n` draws from `N(mean, cov)` that land in `s`.
pub fn measure_estimate<S: MembershipOracle + ?Sized>(
    p: &GaussianParams,
    s: &S,
    n: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::Validation("measure_estimate needs n >= 1".into()));
    }
    Error::check_dim(s.dim(), p.dim())?;
    let sampler = GaussianSampler::new(p)?;
    let mut hits = 0usize;
    for _ in 0..n {
        if s.contains(&sampler.sample(rng))? {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Parses the JSON form of a [`SetSpec`] into a counting set.
pub fn parse_set_spec(text: &str) -> Result<TruncationSet> {
    TruncationSet::new(parse_spec_tree(text)?)
}

/// Parses a [`SetSpec`] without building the oracle.
pub fn parse_spec_tree(text: &str) -> Result<SetSpec> {
    let spec: SetSpec = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn emit_set_spec(spec: &SetSpec) -> String {
    serde_json::to_string_pretty(spec).expect("set specs always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    pub(crate) fn narrow_box() -> SetSpec {
        SetSpec::AxisBox { lo: vec![-0.5, 1.5], hi: vec![0.5, 2.5] }
    }

    #[test]
    fn contains_examples() {
        let b = TruncationSet::new(narrow_box()).unwrap();
        assert!(b.contains(&dvector![0.0, 2.0]).unwrap());
        assert!(b.contains(&dvector![0.5, 1.5]).unwrap(), "closed boundary");
        assert!(!b.contains(&dvector![0.0, 1.0]).unwrap());

        let h = TruncationSet::new(SetSpec::Halfspace { normal: vec![1.0, 0.0], offset: 0.0 }).unwrap();
        assert!(!h.contains(&dvector![-1.0, 5.0]).unwrap());
        assert!(h.contains(&dvector![0.0, 5.0]).unwrap());

        let f = TruncationSet::full_space(3);
        assert!(f.contains(&dvector![1e300, -1e300, 0.0]).unwrap());
        assert_eq!(
            f.contains(&dvector![0.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 1 })
        );
    }

    #[test]
    fn counter_advances_once_per_query() {
        let s = TruncationSet::new(narrow_box()).unwrap();
        for i in 0..10 {
            assert_eq!(s.queries(), i);
            s.contains(&dvector![0.0, 0.0]).unwrap();
        }
        let t = TransformedSet::new(&s, AffineMap::identity(2)).unwrap();
        t.contains(&dvector![0.0, 2.0]).unwrap();
        assert_eq!(s.queries(), 11);
        assert_eq!(t.queries(), 1);
    }

    #[test]
    fn concurrent_counting_loses_nothing() {
        let s = TruncationSet::full_space(1);
        std::thread::scope(|scope| {
            for _ in 0..8 {
                scope.spawn(|| {
                    for _ in 0..1000 {
                        s.contains(&dvector![0.0]).unwrap();
                    }
                });
            }
        });
        assert_eq!(s.queries(), 8000);
    }

    #[test]
    fn transformed_set_uses_map() {
        let s = TruncationSet::new(narrow_box()).unwrap();
        // x -> x + (0, 2) moves the origin into the box.
        let m = AffineMap::new(dmatrix![1.0, 0.0; 0.0, 1.0], dvector![0.0, 2.0]).unwrap();
        let t = TransformedSet::new(&s, m).unwrap();
        assert!(t.contains(&dvector![0.0, 0.0]).unwrap());
        assert!(!t.contains(&dvector![0.0, 2.0]).unwrap());
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            TruncationSet::new(SetSpec::AxisBox { lo: vec![1.0], hi: vec![0.0] }),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            TruncationSet::new(SetSpec::Ball { center: vec![0.0], radius: 0.0 }),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            TruncationSet::new(SetSpec::Union { parts: vec![] }),
            Err(Error::Validation(_))
        ));
        let mixed = SetSpec::Union {
            parts: vec![SetSpec::FullSpace { dim: 1 }, SetSpec::FullSpace { dim: 2 }],
        };
        assert!(matches!(TruncationSet::new(mixed), Err(Error::DimensionMismatch { .. })));

        let mut deep = SetSpec::FullSpace { dim: 1 };
        for _ in 0..MAX_SET_DEPTH - 1 {
            deep = SetSpec::Complement { part: Box::new(deep) };
        }
        assert!(TruncationSet::new(deep.clone()).is_ok());
        deep = SetSpec::Complement { part: Box::new(deep) };
        assert!(matches!(TruncationSet::new(deep), Err(Error::Validation(_))));
    }

    #[test]
    fn parse_examples() {
        let s = parse_set_spec(r#"{"type":"full_space","dim":2}"#).unwrap();
        assert!(s.contains(&dvector![123.0, -4.0]).unwrap());

        let text = r#"{"type":"box","lo":[-0.5,1.5],"hi":[0.5,2.5]}"#;
        assert_eq!(parse_spec_tree(text).unwrap(), narrow_box());

        match parse_set_spec("{\"type\":\"box\",\n \"lo\": [0,]}") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_set_spec(r#"{"type":"box","lo":[2],"hi":[1]}"#),
            Err(Error::Validation(_))
        ));
        assert!(matches!(parse_set_spec(r#"{"type":"blob"}"#), Err(Error::Parse { .. })));
    }

    #[test]
    fn emit_then_parse_is_identity() {
        let spec = SetSpec::Intersection {
            parts: vec![
                narrow_box(),
                SetSpec::Complement { part: Box::new(SetSpec::Ball { center: vec![0.0, 2.0], radius: 0.1 }) },
                SetSpec::Union {
                    parts: vec![
                        SetSpec::Halfspace { normal: vec![1.0, 1.0], offset: -3.0 },
                        SetSpec::FullSpace { dim: 2 },
                    ],
                },
            ],
        };
        assert_eq!(parse_spec_tree(&emit_set_spec(&spec)).unwrap(), spec);
    }
}
