//! Regions of the state space, the affine map onto the unit torus, and the
//! regular lattices the relaxed program is built on.
//!
//! Sets use the textual syntax `RectSet([lo..], [hi..])` and
//! `SphereSet([c..], r)`; a union is written as a list of such strings.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed region of ℝⁿ.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionSet {
    Rect { lower: Vec<f64>, upper: Vec<f64> },
    /// Closed Euclidean ball. The radius is stored directly; `radius_sq()`
    /// gives the squared value used for membership.
    Sphere { center: Vec<f64>, radius: f64 },
    Multi(Vec<RegionSet>),
}

impl RegionSet {
    pub fn rect(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidSet(format!(
                "rect bounds must be non-empty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSet("rect bounds must be finite".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::InvalidSet(format!(
                "rect lower bound {lower:?} exceeds upper bound {upper:?}"
            )));
        }
        Ok(RegionSet::Rect { lower, upper })
    }

    pub fn sphere(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSet("sphere center must be non-empty and finite".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidSet(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(RegionSet::Sphere { center, radius })
    }

    pub fn multi(members: Vec<RegionSet>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidSet("multi-set must have at least one member".into()))?;
        let n = first.dim();
        if let Some(bad) = members.iter().find(|m| m.dim() != n) {
            return Err(Error::InvalidSet(format!(
                "multi-set members disagree on dimension ({n} vs {})",
                bad.dim()
            )));
        }
        Ok(RegionSet::Multi(members))
    }

    pub fn dim(&self) -> usize {
        match self {
            RegionSet::Rect { lower, .. } => lower.len(),
            RegionSet::Sphere { center, .. } => center.len(),
            RegionSet::Multi(members) => members[0].dim(),
        }
    }

    pub fn radius_sq(&self) -> Option<f64> {
        match self {
            RegionSet::Sphere { radius, .. } => Some(radius * radius),
            _ => None,
        }
    }

    /// Closed-set membership.
    pub fn contains(&self, point: &[f64]) -> Result<bool> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: point.len() });
        }
        Ok(self.contains_unchecked(point))
    }

    pub(crate) fn contains_unchecked(&self, point: &[f64]) -> bool {
        match self {
            RegionSet::Rect { lower, upper } => point
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, u))| *l <= *x && *x <= *u),
            RegionSet::Sphere { center, radius } => {
                let d2: f64 = point.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum();
                d2 <= radius * radius
            }
            RegionSet::Multi(members) => members.iter().any(|m| m.contains_unchecked(point)),
        }
    }

    /// Dilates the set about its own center by `1 + fraction`.
    pub fn scale(&self, fraction: f64) -> Result<RegionSet> {
        if !(fraction >= 0.0) || !fraction.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "set scaling must be a non-negative number, got {fraction}"
            )));
        }
        Ok(self.scale_unchecked(fraction))
    }

    fn scale_unchecked(&self, fraction: f64) -> RegionSet {
        if fraction == 0.0 {
            return self.clone();
        }
        let factor = 1.0 + fraction;
        match self {
            RegionSet::Rect { lower, upper } => {
                let (lower, upper) = lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| {
                        let mid = 0.5 * (l + u);
                        let half = 0.5 * (u - l) * factor;
                        (mid - half, mid + half)
                    })
                    .unzip();
                RegionSet::Rect { lower, upper }
            }
            RegionSet::Sphere { center, radius } => {
                RegionSet::Sphere { center: center.clone(), radius: radius * factor }
            }
            RegionSet::Multi(members) => {
                RegionSet::Multi(members.iter().map(|m| m.scale_unchecked(fraction)).collect())
            }
        }
    }

    /// Axis-aligned bounding box `(lower, upper)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            RegionSet::Rect { lower, upper } => (lower.clone(), upper.clone()),
            RegionSet::Sphere { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            RegionSet::Multi(members) => {
                let (mut lo, mut hi) = members[0].bounding_box();
                for m in &members[1..] {
                    let (l, h) = m.bounding_box();
                    for d in 0..lo.len() {
                        lo[d] = lo[d].min(l[d]);
                        hi[d] = hi[d].max(h[d]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Members of a union, or the set itself.
    pub fn members(&self) -> Vec<&RegionSet> {
        match self {
            RegionSet::Multi(m) => m.iter().flat_map(|s| s.members()).collect(),
            other => vec![other],
        }
    }

    /// Parses a single `RectSet(...)` / `SphereSet(...)` literal.
    pub fn parse(text: &str) -> Result<RegionSet> {
        SetParser { src: text.as_bytes(), pos: 0 }.parse_set()
    }

    /// Parses a list of literals into a union (a single entry yields that set).
    pub fn parse_many<S: AsRef<str>>(items: &[S]) -> Result<RegionSet> {
        let mut sets = items.iter().map(|s| RegionSet::parse(s.as_ref())).collect::<Result<Vec<_>>>()?;
        if sets.len() == 1 {
            Ok(sets.pop().unwrap())
        } else {
            RegionSet::multi(sets)
        }
    }

    /// Flattened textual form: one literal per member.
    pub fn to_literals(&self) -> Vec<String> {
        self.members().into_iter().map(|m| m.to_string()).collect()
    }
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", parts.join(", "))
}

impl fmt::Display for RegionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionSet::Rect { lower, upper } => {
                write!(f, "RectSet({}, {})", fmt_list(lower), fmt_list(upper))
            }
            RegionSet::Sphere { center, radius } => {
                write!(f, "SphereSet({}, {radius:?})", fmt_list(center))
            }
            RegionSet::Multi(members) => {
                let parts: Vec<String> = members.iter().map(|m| m.to_string()).collect();
                write!(f, "[{}]", parts.join(", "))
            }
        }
    }
}

struct SetParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl SetParser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::SetSyntax(format!(
            "{msg} at position {} in `{}`",
            self.pos,
            String::from_utf8_lossy(self.src)
        ))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            let sign_ok = (c == b'-' || c == b'+')
                && (self.pos == start || matches!(self.src[self.pos - 1], b'e' | b'E'));
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || sign_ok {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map_err(|_| self.err("expected a number"))
    }

    fn array(&mut self) -> Result<Vec<f64>> {
        self.expect(b'[')?;
        let mut out = Vec::new();
        self.skip_ws();
        if self.src.get(self.pos) == Some(&b']') {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.number()?);
            self.skip_ws();
            match self.src.get(self.pos) {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(self.err("expected `,` or `]`")),
            }
        }
    }

    fn parse_set(mut self) -> Result<RegionSet> {
        let name = self.ident();
        self.expect(b'(')?;
        let set = match name.as_str() {
            "RectSet" => {
                let lo = self.array()?;
                self.expect(b',')?;
                let hi = self.array()?;
                RegionSet::rect(lo, hi)?
            }
            "SphereSet" => {
                let c = self.array()?;
                self.expect(b',')?;
                let r = self.number()?;
                RegionSet::sphere(c, r)?
            }
            other => return Err(self.err(&format!("unknown set type `{other}`"))),
        };
        self.expect(b')')?;
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(self.err("trailing characters"));
        }
        Ok(set)
    }
}

/// State space, initial set, unsafe set and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    pub domain: RegionSet,
    pub initial: RegionSet,
    pub unsafe_set: RegionSet,
    pub horizon: usize,
}

impl SafetySpec {
    pub fn new(domain: RegionSet, initial: RegionSet, unsafe_set: RegionSet, horizon: usize) -> Result<Self> {
        if !matches!(domain, RegionSet::Rect { .. }) {
            return Err(Error::InvalidSet("X_bounds must be a RectSet".into()));
        }
        let n = domain.dim();
        for (name, s) in [("X_init", &initial), ("X_unsafe", &unsafe_set)] {
            if s.dim() != n {
                return Err(Error::InvalidSet(format!(
                    "{name} has dimension {} but X_bounds has dimension {n}",
                    s.dim()
                )));
            }
        }
        if horizon < 1 {
            return Err(Error::InvalidArgument("time horizon must be at least 1".into()));
        }
        Ok(SafetySpec { domain, initial, unsafe_set, horizon })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain_bounds(&self) -> (&[f64], &[f64]) {
        match &self.domain {
            RegionSet::Rect { lower, upper } => (lower, upper),
            _ => unreachable!("domain is validated to be a rectangle"),
        }
    }
}

/// Componentwise affine map `P(x) = scale ⊙ x + offset` onto the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTransform {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl UnitTransform {
    /// Maps the rectangle widened by `pad` times its width on every side onto `[0, 1]ⁿ`.
    pub fn from_bounds(bounds: &RegionSet, pad: f64) -> Result<Self> {
        let RegionSet::Rect { lower, upper } = bounds else {
            return Err(Error::InvalidSet("unit transform requires a RectSet".into()));
        };
        if !(pad >= 0.0) || !pad.is_finite() {
            return Err(Error::InvalidArgument(format!("pad must be non-negative, got {pad}")));
        }
        let mut scale = Vec::with_capacity(lower.len());
        let mut offset = Vec::with_capacity(lower.len());
        for (l, u) in lower.iter().zip(upper) {
            let width = u - l;
            if !(width > 0.0) {
                return Err(Error::InvalidSet(format!(
                    "degenerate bounds: zero width between {l} and {u}"
                )));
            }
            let lo = l - pad * width;
            let hi = u + pad * width;
            let s = 1.0 / (hi - lo);
            scale.push(s);
            offset.push(-lo * s);
        }
        Ok(UnitTransform { scale, offset })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.scale.iter().zip(&self.offset)).map(|(v, (s, o))| s * v + o).collect()
    }

    pub fn inverse(&self, t: &[f64]) -> Vec<f64> {
        t.iter().zip(self.scale.iter().zip(&self.offset)).map(|(v, (s, o))| (v - o) / s).collect()
    }

    pub(crate) fn inverse_into(&self, t: &[f64], out: &mut [f64]) {
        for d in 0..t.len() {
            out[d] = (t[d] - self.offset[d]) / self.scale[d];
        }
    }
}

/// Regular periodic grid `{i / q : 0 ≤ i < q}ⁿ` in torus coordinates.
///
/// Point `k` has multi-index `(k mod q, (k / q) mod q, ...)`: the first
/// coordinate varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    dim: usize,
    resolution: usize,
    points: Vec<f64>,
}

impl Lattice {
    pub fn regular(dim: usize, resolution: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("lattice dimension must be positive".into()));
        }
        if resolution < 2 {
            return Err(Error::InvalidArgument(format!(
                "lattice resolution must be at least 2, got {resolution}"
            )));
        }
        let count = resolution
            .checked_pow(dim as u32)
            .filter(|c| *c <= 50_000_000)
            .ok_or_else(|| Error::InvalidArgument("lattice too large".into()))?;
        let q = resolution as f64;
        let mut points = Vec::with_capacity(count * dim);
        for k in 0..count {
            let mut rest = k;
            for _ in 0..dim {
                points.push((rest % resolution) as f64 / q);
                rest /= resolution;
            }
        }
        Ok(Lattice { dim, resolution, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Multi-index of point `k`.
    pub fn multi_index(&self, k: usize) -> Vec<usize> {
        let mut rest = k;
        (0..self.dim)
            .map(|_| {
                let i = rest % self.resolution;
                rest /= self.resolution;
                i
            })
            .collect()
    }

    /// Splits point indices by membership of `P⁻¹(point)` in `set`.
    pub fn partition(&self, set: &RegionSet, transform: &UnitTransform) -> Partition {
        let flags: Vec<bool> = (0..self.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; self.dim],
                |buf, k| {
                    transform.inverse_into(self.point(k), buf);
                    set.contains_unchecked(buf)
                },
            )
            .collect();
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        for (k, f) in flags.into_iter().enumerate() {
            if f {
                inside.push(k);
            } else {
                outside.push(k);
            }
        }
        Partition { inside, outside }
    }
}

/// Lattice indices inside and outside one set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partition {
    pub inside: Vec<usize>,
    pub outside: Vec<usize>,
}

/// A lattice classified against the (enlarged) initial, unsafe and domain sets.
#[derive(Debug, Clone)]
pub struct ClassifiedLattice {
    pub lattice: Lattice,
    pub initial: Partition,
    pub unsafe_set: Partition,
    pub domain: Partition,
    /// The enlarged sets the partitions were computed against.
    pub scaled: ScaledSets,
}

#[derive(Debug, Clone)]
pub struct ScaledSets {
    pub initial: RegionSet,
    pub unsafe_set: RegionSet,
    pub domain: RegionSet,
}

pub fn build_lattice(
    resolution: usize,
    spec: &SafetySpec,
    transform: &UnitTransform,
    scaling: f64,
) -> Result<ClassifiedLattice> {
    if transform.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: transform.dim() });
    }
    let lattice = Lattice::regular(spec.dim(), resolution)?;
    let scaled = ScaledSets {
        initial: spec.initial.scale(scaling)?,
        unsafe_set: spec.unsafe_set.scale(scaling)?,
        domain: spec.domain.scale(scaling)?,
    };
    Ok(ClassifiedLattice {
        initial: lattice.partition(&scaled.initial, transform),
        unsafe_set: lattice.partition(&scaled.unsafe_set, transform),
        domain: lattice.partition(&scaled.domain, transform),
        lattice,
        scaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rect1(l: f64, u: f64) -> RegionSet {
        RegionSet::rect(vec![l], vec![u]).unwrap()
    }

    #[test]
    fn membership_examples() {
        assert!(rect1(-1.0, 1.0).contains(&[0.0]).unwrap());
        let s = RegionSet::sphere(vec![-0.5, 0.5], 0.4f64.sqrt()).unwrap();
        assert!(s.contains(&[-0.5, 0.5]).unwrap());
        assert!(!rect1(-1.0, -0.9).contains(&[0.0]).unwrap());
        // closed boundary
        assert!(rect1(-1.0, -0.9).contains(&[-0.9]).unwrap());
        assert!(matches!(
            rect1(-1.0, 1.0).contains(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn scaling_examples() {
        let r = rect1(-1.0, 1.0).scale(0.04).unwrap();
        let RegionSet::Rect { lower, upper } = &r else { panic!() };
        assert_abs_diff_eq!(lower[0], -1.04, epsilon = 1e-15);
        assert_abs_diff_eq!(upper[0], 1.04, epsilon = 1e-15);

        let s = RegionSet::sphere(vec![0.0, 0.0], 0.4f64.sqrt()).unwrap().scale(0.05).unwrap();
        assert_abs_diff_eq!(s.radius_sq().unwrap(), 0.441, epsilon = 1e-14);

        let m = RegionSet::parse_many(&["RectSet([-1], [-0.9])", "RectSet([0.9], [1])"]).unwrap();
        assert_eq!(m.scale(0.0).unwrap(), m);
        assert!(rect1(0.0, 1.0).scale(-0.1).is_err());
    }

    #[test]
    fn parse_and_display() {
        let r = RegionSet::parse("RectSet([-1], [1])").unwrap();
        assert_eq!(r, rect1(-1.0, 1.0));
        let s = RegionSet::parse(" SphereSet([0.7, -0.7], 5.477e-1) ").unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(RegionSet::parse(&s.to_string()).unwrap(), s);
        assert!(RegionSet::parse("RectSet([1], [-1])").is_err());
        assert!(RegionSet::parse("BoxSet([1], [2])").is_err());
        assert!(RegionSet::parse("RectSet([1, 2], [3])").is_err());
        assert!(RegionSet::parse("RectSet([0], [1]) x").is_err());
    }

    #[test]
    fn multi_requires_consistent_dims() {
        assert!(RegionSet::multi(vec![]).is_err());
        assert!(RegionSet::multi(vec![
            rect1(0.0, 1.0),
            RegionSet::sphere(vec![0.0, 0.0], 1.0).unwrap()
        ])
        .is_err());
    }

    #[test]
    fn unit_transform_examples() {
        let p = UnitTransform::from_bounds(&rect1(-1.0, 1.0), 0.0).unwrap();
        assert_abs_diff_eq!(p.apply(&[1.0])[0], 1.0);
        assert_abs_diff_eq!(p.apply(&[-1.0])[0], 0.0);
        assert_abs_diff_eq!(p.apply(&[0.2])[0], 0.6);

        let over = RegionSet::rect(vec![1.0, -7.0], vec![90.0, 19.0]).unwrap();
        let p = UnitTransform::from_bounds(&over, 0.0).unwrap();
        let t = p.apply(&[90.0, 19.0]);
        assert_abs_diff_eq!(t[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[1], 1.0, epsilon = 1e-15);

        let padded = UnitTransform::from_bounds(&rect1(-1.0, 1.0), 0.25).unwrap();
        assert_abs_diff_eq!(padded.apply(&[-1.5])[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(padded.apply(&[1.5])[0], 1.0, epsilon = 1e-15);

        assert!(UnitTransform::from_bounds(&rect1(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn lattice_examples() {
        let l = Lattice::regular(1, 4).unwrap();
        let pts: Vec<f64> = l.points().map(|p| p[0]).collect();
        assert_eq!(pts, vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(Lattice::regular(1, 300).unwrap().len(), 300);
        assert_eq!(Lattice::regular(2, 330).unwrap().len(), 108_900);
        let l2 = Lattice::regular(2, 3).unwrap();
        assert_eq!(l2.multi_index(5), vec![2, 1]);
        assert_eq!(l2.point(5), &[2.0 / 3.0, 1.0 / 3.0]);
        assert!(Lattice::regular(1, 1).is_err());
    }

    #[test]
    fn lattice_partitions_are_exhaustive() {
        let spec = SafetySpec::new(
            rect1(-1.0, 1.0),
            rect1(-0.5, 0.5),
            RegionSet::parse_many(&["RectSet([-1], [-0.9])", "RectSet([0.9], [1])"]).unwrap(),
            15,
        )
        .unwrap();
        let p = UnitTransform::from_bounds(&spec.domain, 0.0).unwrap();
        let cl = build_lattice(300, &spec, &p, 0.04).unwrap();
        for part in [&cl.initial, &cl.unsafe_set, &cl.domain] {
            assert_eq!(part.inside.len() + part.outside.len(), 300);
            let mut all: Vec<usize> = part.inside.iter().chain(&part.outside).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..300).collect::<Vec<_>>());
        }
        // x = -1 + 2i/300 inside [-0.52, 0.52]  <=>  72 <= i <= 228
        assert_eq!(cl.initial.inside.len(), 157);
        assert!(cl.domain.outside.is_empty());
    }

    proptest! {
        #[test]
        fn enlargement_is_superset(
            cx in -2.0f64..2.0, cy in -2.0f64..2.0, r in 0.05f64..1.0,
            px in -3.0f64..3.0, py in -3.0f64..3.0, s in 0.0f64..0.5,
            w in 0.01f64..1.0, h in 0.01f64..1.0,
        ) {
            let sets = [
                RegionSet::sphere(vec![cx, cy], r).unwrap(),
                RegionSet::rect(vec![cx, cy], vec![cx + w, cy + h]).unwrap(),
            ];
            for set in sets {
                if set.contains(&[px, py]).unwrap() {
                    prop_assert!(set.scale(s).unwrap().contains(&[px, py]).unwrap());
                }
            }
        }

        #[test]
        fn transform_round_trip(lo in -50.0f64..0.0, w in 0.1f64..100.0, pad in 0.0f64..0.5, t in 0.0f64..1.0) {
            let p = UnitTransform::from_bounds(&rect1(lo, lo + w), pad).unwrap();
            let back = p.apply(&p.inverse(&[t]))[0];
            prop_assert!((back - t).abs() <= 1e-12);
        }
    }
}
