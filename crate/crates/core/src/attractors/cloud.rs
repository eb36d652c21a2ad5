//! Finite point samples of attractors, distances between them, and their
//! on-disk form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::spectral::{EnergyNorm, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Equilibria together with their shot unstable manifolds.
    ManifoldUnion,
    /// Tail states of many long trajectories.
    LongTimeSampling,
    /// Both of the above.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointOrigin {
    Equilibrium,
    UnstableManifold,
    LongTime,
}

impl PointOrigin {
    fn as_str(self) -> &'static str {
        match self {
            PointOrigin::Equilibrium => "equilibrium",
            PointOrigin::UnstableManifold => "unstable_manifold",
            PointOrigin::LongTime => "long_time",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "equilibrium" => Some(PointOrigin::Equilibrium),
            "unstable_manifold" => Some(PointOrigin::UnstableManifold),
            "long_time" => Some(PointOrigin::LongTime),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CloudPoints {
    /// Points of `R^n`; compared with fields as constant functions.
    Vectors(Vec<Vec<f64>>),
    Fields(Vec<SpectralField>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudMetadata {
    pub components: usize,
    /// `K`; zero for clouds of vectors.
    pub modes: usize,
    /// Diffusion coefficients; empty for the limiting ODE.
    pub eps: Vec<f64>,
    pub nonlinearity: Nonlinearity,
    pub provenance: Provenance,
    /// Maximum nearest-neighbour spacing.
    pub resolution: f64,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttractorCloud {
    pub points: CloudPoints,
    pub origins: Vec<PointOrigin>,
    pub metadata: CloudMetadata,
}

fn fluct_energy_sq(c: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..c.nrows() {
        for k in 1..c.ncols() {
            acc += w[[i, k]] * c[[i, k]] * c[[i, k]];
        }
    }
    acc
}

/// Points as flat rows in coordinates where the distance is Euclidean:
/// coefficients scaled by the square root of the energy weights (the
/// mode-0 weight is 1, so vectors embed as their means).
struct Packed {
    dim: usize,
    data: Vec<f64>,
}

impl Packed {
    fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    fn len(&self) -> usize {
        self.data.len() / self.dim
    }
}

fn pack_field(c: &Array2<f64>, sqrt_w: &Array2<f64>, out: &mut Vec<f64>) {
    out.extend(c.iter().zip(sqrt_w.iter()).map(|(x, s)| x * s));
}

/// Rows sorted along the coordinate of widest spread, for pruned
/// nearest-neighbour scans.
struct SortedIndex {
    axis: usize,
    order: Vec<usize>,
    keys: Vec<f64>,
}

impl SortedIndex {
    fn new(p: &Packed) -> Self {
        let axis = (0..p.dim)
            .map(|a| {
                let (lo, hi) = (0..p.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), j| {
                    let x = p.row(j)[a];
                    (lo.min(x), hi.max(x))
                });
                (a, hi - lo)
            })
            .fold((0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
            .0;
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&i, &j| p.row(i)[axis].total_cmp(&p.row(j)[axis]).then(i.cmp(&j)));
        let keys = order.iter().map(|&j| p.row(j)[axis]).collect();
        Self { axis, order, keys }
    }

    /// Squared distance from `q` to the nearest row other than `exclude`.
    fn nearest_sq(&self, p: &Packed, q: &[f64], exclude: Option<usize>) -> f64 {
        let key = q[self.axis];
        let start = self.keys.partition_point(|&k| k < key);
        let mut best = f64::INFINITY;
        let visit = |pos: usize, best: &mut f64| {
            let j = self.order[pos];
            if Some(j) == exclude {
                return;
            }
            let mut acc = 0.0;
            for (a, b) in p.row(j).iter().zip(q) {
                acc += (a - b) * (a - b);
                if acc >= *best {
                    return;
                }
            }
            *best = acc;
        };
        let (mut up, mut down) = (start, start);
        loop {
            let up_gap = (up < self.keys.len()).then(|| (self.keys[up] - key).powi(2));
            let down_gap = (down > 0).then(|| (self.keys[down - 1] - key).powi(2));
            match (up_gap, down_gap) {
                (Some(u), Some(d)) if u.min(d) >= best => break,
                (Some(u), None) if u >= best => break,
                (None, Some(d)) if d >= best => break,
                (None, None) => break,
                (Some(u), d) if d.is_none_or(|d| u <= d) => {
                    visit(up, &mut best);
                    up += 1;
                }
                _ => {
                    down -= 1;
                    visit(down, &mut best);
                }
            }
        }
        best
    }
}

impl AttractorCloud {
    pub fn len(&self) -> usize {
        match &self.points {
            CloudPoints::Vectors(v) => v.len(),
            CloudPoints::Fields(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn components(&self) -> usize {
        self.metadata.components
    }

    /// Spatial averages of all points.
    pub fn means(&self) -> Vec<Vec<f64>> {
        match &self.points {
            CloudPoints::Vectors(v) => v.clone(),
            CloudPoints::Fields(f) => f.iter().map(SpectralField::mean).collect(),
        }
    }

    /// Componentwise bounds of the point averages.
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let n = self.components();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for m in self.means() {
            for i in 0..n {
                lo[i] = lo[i].min(m[i]);
                hi[i] = hi[i].max(m[i]);
            }
        }
        Ok((lo, hi))
    }

    /// Flat scaled rows; `norm` fixes the embedding dimension and is
    /// required for field clouds.
    fn packed(&self, norm: Option<&EnergyNorm>) -> Result<Packed> {
        let n = self.components();
        let Some(norm) = norm else {
            return match &self.points {
                CloudPoints::Vectors(v) => Ok(Packed {
                    dim: n,
                    data: v.iter().flatten().copied().collect(),
                }),
                CloudPoints::Fields(_) => Err(Error::invalid("comparing field clouds needs an energy norm")),
            };
        };
        let w = norm.weights();
        if w.nrows() != n {
            return Err(Error::ShapeMismatch {
                expected: w.dim(),
                found: (n, w.ncols()),
            });
        }
        let sqrt_w = w.mapv(f64::sqrt);
        let dim = w.len();
        let mut data = Vec::with_capacity(dim * self.len());
        match &self.points {
            CloudPoints::Vectors(v) => {
                for p in v {
                    for &m in p {
                        data.push(m);
                        data.extend(std::iter::repeat_n(0.0, w.ncols() - 1));
                    }
                }
            }
            CloudPoints::Fields(f) => {
                for p in f {
                    if p.coeffs.dim() != w.dim() {
                        return Err(Error::ShapeMismatch {
                            expected: w.dim(),
                            found: p.coeffs.dim(),
                        });
                    }
                    pack_field(&p.coeffs, &sqrt_w, &mut data);
                }
            }
        }
        Ok(Packed { dim, data })
    }

    /// Maximum over points of the distance to the nearest other point.
    pub fn resolution(&self, norm: Option<&EnergyNorm>) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if self.len() == 1 {
            return Ok(0.0);
        }
        let p = self.packed(norm)?;
        let index = SortedIndex::new(&p);
        let worst = (0..p.len())
            .into_par_iter()
            .map(|i| index.nearest_sq(&p, p.row(i), Some(i)))
            .reduce(|| 0.0, f64::max);
        Ok(worst.sqrt())
    }

    /// Recomputes and stores the resolution in the metadata.
    pub fn refresh_resolution(&mut self, norm: Option<&EnergyNorm>) -> Result<f64> {
        let h = self.resolution(norm)?;
        self.metadata.resolution = h;
        Ok(h)
    }

    /// Writes `path` (one row per point) and the metadata sidecar next to it.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.components();
        let cols = match &self.points {
            CloudPoints::Vectors(_) => 1,
            CloudPoints::Fields(f) => f.first().map_or(self.metadata.modes + 1, |p| p.mode_count()),
        };
        let mut out = String::from("provenance");
        for i in 0..n {
            for k in 0..cols {
                let _ = write!(out, ",c_{i}_{k}");
            }
        }
        out.push('\n');
        for (idx, origin) in self.origins.iter().enumerate() {
            out.push_str(origin.as_str());
            match &self.points {
                CloudPoints::Vectors(v) => {
                    for x in &v[idx] {
                        let _ = write!(out, ",{x}");
                    }
                }
                CloudPoints::Fields(f) => {
                    for x in f[idx].coeffs.iter() {
                        let _ = write!(out, ",{x}");
                    }
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let meta = sidecar_path(path);
        let text = toml::to_string(&self.metadata).map_err(|e| Error::invalid(format!("cannot serialise cloud metadata: {e}")))?;
        std::fs::write(&meta, text).map_err(|e| Error::io(&meta, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let meta_path = sidecar_path(path);
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let metadata: CloudMetadata = toml::from_str(&meta_text).map_err(|e| crate::config::parse_error(&meta_path, &meta_text, &e))?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let n = metadata.components;
        let vectors = metadata.modes == 0;
        let cols = if vectors { 1 } else { metadata.modes + 1 };
        let mut origins = Vec::new();
        let mut vecs = Vec::new();
        let mut fields = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let mut parts = line.split(',');
            let tag = parts.next().unwrap_or_default();
            origins.push(PointOrigin::parse(tag).ok_or_else(|| bad(format!("unknown provenance '{tag}'")))?);
            let values = parts
                .map(|s| s.parse::<f64>().map_err(|e| bad(format!("'{s}': {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != n * cols {
                return Err(bad(format!("expected {} coefficients, found {}", n * cols, values.len())));
            }
            if vectors {
                vecs.push(values);
            } else {
                fields.push(SpectralField::from_flat(n, values).map_err(|e| bad(e.to_string()))?);
            }
        }
        let points = if vectors { CloudPoints::Vectors(vecs) } else { CloudPoints::Fields(fields) };
        Ok(Self {
            points,
            origins,
            metadata,
        })
    }
}

/// `cloud.csv` -> `cloud.meta.toml`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HausdorffDistance {
    /// `max(a_to_b, b_to_a)`.
    pub sym: f64,
    /// `sup_{a in A} inf_{b in B} ||a - b||`.
    pub a_to_b: f64,
    pub b_to_a: f64,
}

fn one_sided(a: &Packed, b: &Packed, b_index: &SortedIndex) -> f64 {
    (0..a.len())
        .into_par_iter()
        .map(|i| b_index.nearest_sq(b, a.row(i), None))
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

/// Hausdorff distance in `X_eps^{1/2}`; vectors enter as constant fields.
/// `norm` may be `None` only when both clouds consist of vectors.
pub fn hausdorff_distance(a: &AttractorCloud, b: &AttractorCloud, norm: Option<&EnergyNorm>) -> Result<HausdorffDistance> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if a.components() != b.components() {
        return Err(Error::invalid(format!(
            "clouds live in different dimensions ({} vs {})",
            a.components(),
            b.components()
        )));
    }
    let pa = a.packed(norm)?;
    let pb = b.packed(norm)?;
    let a_to_b = one_sided(&pa, &pb, &SortedIndex::new(&pb));
    let b_to_a = one_sided(&pb, &pa, &SortedIndex::new(&pa));
    Ok(HausdorffDistance {
        sym: a_to_b.max(b_to_a),
        a_to_b,
        b_to_a,
    })
}

/// Distance from a single state to the cloud.
pub fn distance_to_cloud(point: &SpectralField, cloud: &AttractorCloud, norm: &EnergyNorm) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let p = cloud.packed(Some(norm))?;
    if point.coeffs.dim() != norm.weights().dim() {
        return Err(Error::ShapeMismatch {
            expected: norm.weights().dim(),
            found: point.coeffs.dim(),
        });
    }
    let mut q = Vec::with_capacity(p.dim);
    pack_field(&point.coeffs, &norm.weights().mapv(f64::sqrt), &mut q);
    Ok(SortedIndex::new(&p).nearest_sq(&p, &q, None).sqrt())
}

/// `sup_u ||(I - P) u||_{X_eps^{1/2}}` over the cloud; zero for vector clouds.
pub fn manifold_deflection(cloud: &AttractorCloud, norm: &EnergyNorm) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    match &cloud.points {
        CloudPoints::Vectors(_) => Ok(0.0),
        CloudPoints::Fields(f) => Ok(f
            .iter()
            .map(|p| fluct_energy_sq(&p.coeffs, norm.weights()).sqrt())
            .fold(0.0, f64::max)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{CosineBasis, DiffusionSpec, DomainSpec};

    fn meta(n: usize, modes: usize) -> CloudMetadata {
        CloudMetadata {
            components: n,
            modes,
            eps: if modes == 0 { vec![] } else { vec![1.0; n] },
            nonlinearity: Nonlinearity::pitchfork(2.0),
            provenance: Provenance::ManifoldUnion,
            resolution: 0.0,
            parameters: BTreeMap::new(),
        }
    }

    fn vcloud(points: Vec<f64>) -> AttractorCloud {
        AttractorCloud {
            origins: vec![PointOrigin::UnstableManifold; points.len()],
            points: CloudPoints::Vectors(points.into_iter().map(|x| vec![x]).collect()),
            metadata: meta(1, 0),
        }
    }

    fn uniform(a: f64, b: f64, count: usize) -> Vec<f64> {
        (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect()
    }

    #[test]
    fn identical_clouds_are_at_distance_zero() {
        let c = vcloud(uniform(-1.0, 1.0, 11));
        let d = hausdorff_distance(&c, &c, None).unwrap();
        assert_eq!(d.sym, 0.0);
    }

    #[test]
    fn origin_versus_constant_three() {
        let basis = CosineBasis::new(&DomainSpec::new(1).unwrap(), 8).unwrap();
        let diff = DiffusionSpec::uniform(1, 5.0).unwrap();
        let norm = EnergyNorm::new(&diff, &basis);
        let a = vcloud(vec![0.0]);
        let mut b = AttractorCloud {
            points: CloudPoints::Fields(vec![SpectralField::constant(&[3.0], &basis)]),
            origins: vec![PointOrigin::Equilibrium],
            metadata: meta(1, 8),
        };
        assert!((hausdorff_distance(&a, &b, Some(&norm)).unwrap().sym - 3.0).abs() < 1e-15);
        // a genuine fluctuation counts with its energy weight
        b.points = CloudPoints::Fields(vec![SpectralField::mode(1, 0, 1, 1.0, &basis)]);
        let expected = (5.0 * std::f64::consts::PI.powi(2) + 1.0).sqrt();
        assert!((hausdorff_distance(&a, &b, Some(&norm)).unwrap().sym - expected).abs() < 1e-12);
    }

    #[test]
    fn coarse_versus_fine_grid() {
        let ustar = 1.915_008_074_4;
        let coarse = vcloud(uniform(-ustar, ustar, 201));
        let fine = vcloud(uniform(-ustar, ustar, 401));
        let spacing = 2.0 * ustar / 200.0;
        let d = hausdorff_distance(&coarse, &fine, None).unwrap();
        assert!(d.sym <= spacing / 2.0 + 1e-12);
        assert_eq!(d.a_to_b, 0.0);
        assert!((coarse.resolution(None).unwrap() - spacing).abs() < 1e-12);
    }

    #[test]
    fn one_sided_distances_differ() {
        let a = vcloud(vec![0.0]);
        let b = vcloud(vec![0.0, 2.0]);
        let d = hausdorff_distance(&a, &b, None).unwrap();
        assert_eq!(d.a_to_b, 0.0);
        assert_eq!(d.b_to_a, 2.0);
        assert_eq!(d.sym, 2.0);
    }

    #[test]
    fn empty_cloud_rejected() {
        let a = vcloud(vec![]);
        let b = vcloud(vec![1.0]);
        assert!(matches!(hausdorff_distance(&a, &b, None), Err(Error::EmptyCloud)));
        assert!(matches!(a.resolution(None), Err(Error::EmptyCloud)));
    }

    #[test]
    fn deflection_examples() {
        let basis = CosineBasis::new(&DomainSpec::new(1).unwrap(), 8).unwrap();
        let diff = DiffusionSpec::uniform(1, 1.0).unwrap();
        let norm = EnergyNorm::new(&diff, &basis);
        let consts = AttractorCloud {
            points: CloudPoints::Fields(vec![
                SpectralField::constant(&[1.0], &basis),
                SpectralField::constant(&[-2.0], &basis),
            ]),
            origins: vec![PointOrigin::Equilibrium; 2],
            metadata: meta(1, 8),
        };
        assert_eq!(manifold_deflection(&consts, &norm).unwrap(), 0.0);
        let origin = AttractorCloud {
            points: CloudPoints::Fields(vec![SpectralField::zeros(1, &basis)]),
            ..consts.clone()
        };
        assert_eq!(manifold_deflection(&origin, &norm).unwrap(), 0.0);
        let bent = AttractorCloud {
            points: CloudPoints::Fields(vec![SpectralField::constant(&[1.0], &basis).add(&SpectralField::mode(1, 0, 2, 0.1, &basis))]),
            ..consts
        };
        let expected = 0.1 * (4.0 * std::f64::consts::PI.powi(2) + 1.0).sqrt();
        assert!((manifold_deflection(&bent, &norm).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let basis = CosineBasis::new(&DomainSpec::new(2).unwrap(), 4).unwrap();
        let mut c = AttractorCloud {
            points: CloudPoints::Fields(vec![
                SpectralField::constant(&[0.1, 1.0 / 3.0], &basis),
                SpectralField::mode(2, 1, 3, -2.5e-17, &basis),
            ]),
            origins: vec![PointOrigin::Equilibrium, PointOrigin::LongTime],
            metadata: CloudMetadata {
                nonlinearity: Nonlinearity::Coupled { a: 1.5, b: 0.3 },
                ..meta(2, 4)
            },
        };
        c.metadata.parameters.insert("seed".into(), 7.0);
        let path = dir.path().join("cloud.csv");
        c.write_csv(&path).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(AttractorCloud::read_csv(&path).unwrap(), c);

        let v = vcloud(vec![0.5, -1.0 / 7.0]);
        v.write_csv(&path).unwrap();
        assert_eq!(AttractorCloud::read_csv(&path).unwrap(), v);
    }

    #[test]
    fn corrupted_csv_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.csv");
        vcloud(vec![0.5, 1.0]).write_csv(&path).unwrap();
        std::fs::write(&path, "provenance,c_0_0\nequilibrium,0.5\nequilibrium,zz\n").unwrap();
        match AttractorCloud::read_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
