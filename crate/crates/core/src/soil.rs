//! Adhesion-slip characteristic curves, the soil catalog and the soil map.
//!
//! The curve is `mu(s) = a * (1 - p*exp(alpha1*s) - (1-p)*exp(alpha2*s))`.
//! Within a class of grounds the shape `(p, alpha1, alpha2)` is shared and
//! only the scale `a` moves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SoilError {
    #[error("soil catalog is empty")]
    EmptyCatalog,
    #[error("duplicate soil name `{0}`")]
    DuplicateName(String),
    #[error("soil `{name}`: {reason}")]
    InvalidParams { name: String, reason: String },
    #[error("soil map entry {index} refers to unknown soil `{name}`")]
    UnknownSoil { index: usize, name: String },
    #[error("soil map: {0}")]
    InvalidMap(String),
}

/// Fixed shape of the adhesion-slip curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveShape {
    pub p: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl CurveShape {
    /// Shape shared by all built-in soils.
    pub const PROTOTYPE: CurveShape = CurveShape { p: 0.52, alpha1: 0.01, alpha2: -11.36 };

    /// Unit-scale curve value at slip `s`; zero at `s = 0` by construction.
    pub fn value(&self, s: f64) -> f64 {
        1.0 - self.p * (self.alpha1 * s).exp() - (1.0 - self.p) * (self.alpha2 * s).exp()
    }
}

/// One ground type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoilCurveParams {
    pub name: String,
    /// Curve scale.
    pub a: f64,
    pub p: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Soil-deformation rolling resistance coefficient.
    pub rho_s: f64,
}

impl SoilCurveParams {
    pub fn new(name: impl Into<String>, a: f64, shape: CurveShape, rho_s: f64) -> Self {
        Self { name: name.into(), a, p: shape.p, alpha1: shape.alpha1, alpha2: shape.alpha2, rho_s }
    }

    pub fn shape(&self) -> CurveShape {
        CurveShape { p: self.p, alpha1: self.alpha1, alpha2: self.alpha2 }
    }

    pub fn validate(&self) -> Result<(), SoilError> {
        let fail = |reason: String| Err(SoilError::InvalidParams { name: self.name.clone(), reason });
        if self.name.is_empty() {
            return fail("name must not be empty".into());
        }
        if !(self.a > 0.0) || !self.a.is_finite() {
            return fail(format!("a must be > 0, got {}", self.a));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return fail(format!("p must lie in [0, 1], got {}", self.p));
        }
        if !self.alpha1.is_finite() || !self.alpha2.is_finite() {
            return fail("exponents must be finite".into());
        }
        if !(self.rho_s >= 0.0) {
            return fail(format!("rho_s must be >= 0, got {}", self.rho_s));
        }
        Ok(())
    }
}

/// Adhesion coefficient at slip `s`.
pub fn mu_of_s(params: &SoilCurveParams, s: f64) -> f64 {
    params.a * params.shape().value(s)
}

/// Named soils, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct SoilCatalog {
    soils: Vec<SoilCurveParams>,
}

impl SoilCatalog {
    pub fn new(soils: Vec<SoilCurveParams>) -> Result<Self, SoilError> {
        if soils.is_empty() {
            return Err(SoilError::EmptyCatalog);
        }
        for (i, s) in soils.iter().enumerate() {
            s.validate()?;
            if soils[..i].iter().any(|o| o.name == s.name) {
                return Err(SoilError::DuplicateName(s.name.clone()));
            }
        }
        Ok(Self { soils })
    }

    /// The five ground types of the field trials. Scales come from the
    /// curve fits; the rolling resistances are synthetic stand-ins.
    pub fn builtin() -> Self {
        let shape = CurveShape::PROTOTYPE;
        Self::new(vec![
            SoilCurveParams::new("hard", 1.42, shape, 0.05),
            SoilCurveParams::new("fine", 0.85, shape, 0.10),
            SoilCurveParams::new("wet", 0.83, shape, 0.10),
            SoilCurveParams::new("coarse", 0.91, shape, 0.12),
            SoilCurveParams::new("grass", 0.4, shape, 0.05),
        ])
        .expect("built-in catalog is valid")
    }

    pub fn get(&self, name: &str) -> Option<&SoilCurveParams> {
        self.soils.iter().find(|s| s.name == name)
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.soils.iter().position(|s| s.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SoilCurveParams> {
        self.soils.iter()
    }

    pub fn len(&self) -> usize {
        self.soils.len()
    }

    pub fn is_empty(&self) -> bool {
        self.soils.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    /// Path position where this soil starts (m).
    pub start: f64,
    pub soil: String,
}

/// Piecewise-constant assignment of soils to path positions. Names are
/// resolved against a catalog when the map is built, so lookups cannot fail.
#[derive(Debug, Clone, PartialEq)]
pub struct SoilMap {
    breakpoints: Vec<Breakpoint>,
    resolved: Vec<usize>,
}

impl SoilMap {
    pub fn new(breakpoints: Vec<Breakpoint>, catalog: &SoilCatalog) -> Result<Self, SoilError> {
        let first = breakpoints.first().ok_or_else(|| SoilError::InvalidMap("no breakpoints".into()))?;
        if first.start != 0.0 {
            return Err(SoilError::InvalidMap(format!("first breakpoint must start at 0, got {}", first.start)));
        }
        for w in breakpoints.windows(2) {
            if !(w[1].start > w[0].start) || !w[1].start.is_finite() {
                return Err(SoilError::InvalidMap(format!(
                    "positions must be strictly increasing ({} then {})",
                    w[0].start, w[1].start
                )));
            }
        }
        let resolved = breakpoints
            .iter()
            .enumerate()
            .map(|(index, b)| {
                catalog
                    .index_of(&b.soil)
                    .ok_or_else(|| SoilError::UnknownSoil { index, name: b.soil.clone() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { breakpoints, resolved })
    }

    /// Single soil everywhere.
    pub fn uniform(soil: &str, catalog: &SoilCatalog) -> Result<Self, SoilError> {
        Self::new(vec![Breakpoint { start: 0.0, soil: soil.to_string() }], catalog)
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    /// Index of the segment containing `position`. Boundaries belong to the
    /// segment on their right; negative positions map to the first segment.
    pub fn segment_at(&self, position: f64) -> usize {
        self.breakpoints.partition_point(|b| b.start <= position).saturating_sub(1)
    }
}

/// Soil under `position`; positions past the last breakpoint use the last soil.
pub fn soil_at<'a>(map: &SoilMap, catalog: &'a SoilCatalog, position: f64) -> &'a SoilCurveParams {
    &catalog.soils[map.resolved[map.segment_at(position)]]
}
