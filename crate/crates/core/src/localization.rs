//! Localization schemes: Gaspari-Cohn tapering and learned correlation maps.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::io;
use crate::numerics::DenseMatrix;
use crate::observations::ObservationOperator;

/// Fifth-order piecewise-rational compactly supported correlation function
/// with half-width `c`; zero beyond `2c`.
pub fn gaspari_cohn(distance: f64, c: f64) -> f64 {
    let z = distance.abs() / c;
    if z <= 1.0 {
        (((-0.25 * z + 0.5) * z + 0.625) * z - 5.0 / 3.0) * z * z + 1.0
    } else if z < 2.0 {
        ((((z / 12.0 - 0.5) * z + 0.625) * z + 5.0 / 3.0) * z - 5.0) * z + 4.0 - 2.0 / (3.0 * z)
    } else {
        0.0
    }
}

/// Distance between two grid points on a periodic grid of `n` points.
pub fn circular_distance(i: usize, g: usize, n: usize) -> usize {
    let d = i.abs_diff(g) % n;
    d.min(n - d)
}

/// A learned map: `L(q, i, j)` weights input correlation `q` when estimating
/// the correlation of state `i` with observation `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTensor {
    n_state: usize,
    n_obs: usize,
    /// Layout `(q, i, j)` row-major.
    entries: Vec<f64>,
}

impl MapTensor {
    pub fn new(n_state: usize, n_obs: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n_state * n_state * n_obs {
            return dim_err(format!("{} entries for N={n_state}, M={n_obs}", entries.len()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("map entries must be finite".into()));
        }
        Ok(Self { n_state, n_obs, entries })
    }

    pub fn zeros(n_state: usize, n_obs: usize) -> Self {
        Self { n_state, n_obs, entries: vec![0.0; n_state * n_state * n_obs] }
    }

    /// Stack of identity matrices; leaves correlations unchanged.
    pub fn identity(n_state: usize, n_obs: usize) -> Self {
        let mut m = Self::zeros(n_state, n_obs);
        for i in 0..n_state {
            for j in 0..n_obs {
                m.set(i, i, j, 1.0);
            }
        }
        m
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn offset(&self, q: usize, i: usize, j: usize) -> usize {
        (q * self.n_state + i) * self.n_obs + j
    }

    pub fn get(&self, q: usize, i: usize, j: usize) -> f64 {
        self.entries[self.offset(q, i, j)]
    }

    pub fn set(&mut self, q: usize, i: usize, j: usize, v: f64) {
        let o = self.offset(q, i, j);
        self.entries[o] = v;
    }

    /// The regression vector `L(·, i, j)`.
    pub fn vector(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.n_state).map(|q| self.get(q, i, j)).collect()
    }

    pub fn set_vector(&mut self, i: usize, j: usize, u: &[f64]) {
        for (q, &v) in u.iter().enumerate() {
            self.set(q, i, j, v);
        }
    }

    /// `L(·,·,j)ᵀ r` as an N x N matrix with rows `i` and columns `q`.
    pub fn slice_for_obs(&self, j: usize) -> DenseMatrix {
        DenseMatrix::from_fn(self.n_state, self.n_state, |i, q| self.get(q, i, j))
    }
}

/// Diagonal map `L_d(i, j)`: a scalar factor per state/observation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMap {
    pub weights: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocalizationScheme {
    None,
    GaspariCohn { half_width: f64 },
    FullMap(MapTensor),
    DiagonalMap(DiagonalMap),
}

impl LocalizationScheme {
    pub fn gaspari_cohn(half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::Config(format!("half-width must be positive, got {half_width}")));
        }
        Ok(Self::GaspariCohn { half_width })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::GaspariCohn { .. } => "gc",
            Self::FullMap(_) => "map",
            Self::DiagonalMap(_) => "diagonal",
        }
    }

    /// Precomputes per-observation operators for a given observation network.
    pub fn prepare(&self, op: &ObservationOperator) -> Result<PreparedLocalization> {
        let (n, m) = (op.n_state(), op.n_obs());
        let check = |nn: usize, mm: usize| {
            if nn != n || mm != m {
                dim_err(format!("scheme is {nn}x{mm}, observation network is {n}x{m}"))
            } else {
                Ok(())
            }
        };
        Ok(match self {
            Self::None => PreparedLocalization::Identity,
            Self::GaspariCohn { half_width } => {
                if !(*half_width > 0.0) {
                    return Err(Error::Config("half-width must be positive".into()));
                }
                PreparedLocalization::Weights(DenseMatrix::from_fn(n, m, |i, j| {
                    gaspari_cohn(circular_distance(i, op.center(j), n) as f64, *half_width)
                }))
            }
            Self::DiagonalMap(d) => {
                check(d.weights.nrows(), d.weights.ncols())?;
                PreparedLocalization::Weights(d.weights.clone())
            }
            Self::FullMap(map) => {
                check(map.n_state(), map.n_obs())?;
                PreparedLocalization::Linear((0..m).map(|j| map.slice_for_obs(j)).collect())
            }
        })
    }
}

/// A scheme specialized to one observation network.
#[derive(Debug, Clone)]
pub enum PreparedLocalization {
    Identity,
    /// Entrywise weights, N x M.
    Weights(DenseMatrix),
    /// One N x N matrix per observation (rows = target state, cols = input).
    Linear(Vec<DenseMatrix>),
}

impl PreparedLocalization {
    /// Transforms the correlation column of observation `j` into `out`.
    pub fn apply(&self, r_col: &[f64], j: usize, out: &mut [f64]) {
        match self {
            Self::Identity => out.copy_from_slice(r_col),
            Self::Weights(w) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = w[(i, j)] * r_col[i];
                }
            }
            Self::Linear(mats) => {
                let a = &mats[j];
                out.fill(0.0);
                // Column-major: accumulate column q scaled by r_q.
                for (q, &rq) in r_col.iter().enumerate() {
                    if rq == 0.0 {
                        continue;
                    }
                    for (o, &v) in out.iter_mut().zip(a.column(q).iter()) {
                        *o += v * rq;
                    }
                }
            }
        }
    }
}

/// Transformed correlation column `r̃(·, j)` for observation `j`.
pub fn transform_correlation(
    scheme: &LocalizationScheme,
    op: &ObservationOperator,
    r_col: &[f64],
    j: usize,
) -> Result<Vec<f64>> {
    if r_col.len() != op.n_state() {
        return dim_err(format!("column has {} entries, expected {}", r_col.len(), op.n_state()));
    }
    if j >= op.n_obs() {
        return dim_err(format!("observation index {j} out of range"));
    }
    let mut out = vec![0.0; r_col.len()];
    scheme.prepare(op)?.apply(r_col, j, &mut out);
    Ok(out)
}

/// Provenance stored alongside a persisted scheme.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MapMetadata {
    #[serde(rename = "K_train")]
    pub k_train: usize,
    #[serde(rename = "L_train")]
    pub l_train: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub obs_kind: String,
    pub regressor_id: String,
    pub created: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SchemeHeader {
    variant: String,
    #[serde(rename = "N")]
    n_state: usize,
    #[serde(rename = "M")]
    n_obs: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    half_width: Option<f64>,
    #[serde(flatten)]
    meta: MapMetadata,
}

fn header_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Persists a scheme as a JSON header (`<stem>.json`) and, for learned maps,
/// a raw little-endian f64 payload (`<stem>.bin`).
pub fn save_scheme(path: &Path, scheme: &LocalizationScheme, n_state: usize, n_obs: usize, meta: &MapMetadata) -> Result<()> {
    let mut header = SchemeHeader {
        variant: scheme.name().into(),
        n_state,
        n_obs,
        half_width: None,
        meta: meta.clone(),
    };
    match scheme {
        LocalizationScheme::None => {}
        LocalizationScheme::GaspariCohn { half_width } => header.half_width = Some(*half_width),
        LocalizationScheme::FullMap(map) => {
            if map.n_state() != n_state || map.n_obs() != n_obs {
                return dim_err("map shape differs from header");
            }
            io::write_atomic(&io::payload_path(path), &io::encode_f64(map.entries()))?;
        }
        LocalizationScheme::DiagonalMap(d) => {
            if d.weights.nrows() != n_state || d.weights.ncols() != n_obs {
                return dim_err("diagonal map shape differs from header");
            }
            // (i, j) row-major.
            let flat: Vec<f64> = d.weights.transpose().iter().copied().collect();
            io::write_atomic(&io::payload_path(path), &io::encode_f64(&flat))?;
        }
    }
    io::write_json(&header_path(path), &header)
}

pub fn load_scheme(path: &Path) -> Result<(LocalizationScheme, MapMetadata)> {
    let hpath = header_path(path);
    let header: SchemeHeader = io::read_json(&hpath)?;
    let (n, m) = (header.n_state, header.n_obs);
    let scheme = match header.variant.as_str() {
        "none" => LocalizationScheme::None,
        "gc" => {
            let c = header.half_width.ok_or_else(|| Error::Malformed {
                path: hpath.clone(),
                reason: "gc scheme without half_width".into(),
            })?;
            LocalizationScheme::gaspari_cohn(c)?
        }
        "map" => {
            let flat = io::read_payload(&io::payload_path(path), n * n * m)?;
            LocalizationScheme::FullMap(MapTensor::new(n, m, flat)?)
        }
        "diagonal" => {
            let flat = io::read_payload(&io::payload_path(path), n * m)?;
            LocalizationScheme::DiagonalMap(DiagonalMap { weights: DenseMatrix::from_row_slice(n, m, &flat) })
        }
        other => {
            return Err(Error::Malformed { path: hpath, reason: format!("unknown variant '{other}'") });
        }
    };
    Ok((scheme, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn gc_reference_values() {
        for c in [0.5, 1.0, 3.0, 7.5] {
            assert_eq!(gaspari_cohn(0.0, c), 1.0);
            assert!(gaspari_cohn(2.0 * c, c).abs() < 1e-12);
            assert_eq!(gaspari_cohn(2.5 * c, c), 0.0);
            assert!((gaspari_cohn(c, c) - 5.0 / 24.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gc_continuous_at_branch_points() {
        let c = 4.0;
        for d in [c, 2.0 * c] {
            for eps in [1e-4, 1e-6, 1e-8] {
                assert!((gaspari_cohn(d + eps, c) - gaspari_cohn(d - eps, c)).abs() < 10.0 * eps);
            }
        }
    }

    #[test]
    fn circular_distances() {
        assert_eq!(circular_distance(0, 0, 40), 0);
        assert_eq!(circular_distance(0, 39, 40), 1);
        assert_eq!(circular_distance(39, 0, 40), 1);
        assert_eq!(circular_distance(5, 25, 40), 20);
    }

    #[test]
    fn identity_transforms() {
        let op = ObservationOperator::direct(10, 40).unwrap();
        let col: Vec<f64> = (0..40).map(|q| (q as f64 * 0.37).sin()).collect();
        let id = LocalizationScheme::FullMap(MapTensor::identity(40, 10));
        assert_eq!(transform_correlation(&id, &op, &col, 3).unwrap(), col);
        assert_eq!(transform_correlation(&LocalizationScheme::None, &op, &col, 3).unwrap(), col);
        let wide = LocalizationScheme::gaspari_cohn(1e9).unwrap();
        let out = transform_correlation(&wide, &op, &col, 3).unwrap();
        for (a, b) in out.iter().zip(&col) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_half_scaling() {
        let op = ObservationOperator::direct(10, 40).unwrap();
        let d = LocalizationScheme::DiagonalMap(DiagonalMap { weights: DenseMatrix::from_element(40, 10, 0.5) });
        let out = transform_correlation(&d, &op, &[1.0; 40], 0).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gc_anchor_uses_observation_center() {
        let op = ObservationOperator::indirect(40).unwrap();
        let gc = LocalizationScheme::gaspari_cohn(2.0).unwrap();
        let out = transform_correlation(&gc, &op, &[1.0; 40], 5).unwrap();
        assert_eq!(out[10], 1.0);
        assert_eq!(out[14], 0.0);
        assert!(out[9] < 1.0 && out[9] > 0.0);
        assert!(LocalizationScheme::gaspari_cohn(0.0).is_err());
    }

    #[test]
    fn mismatched_map_is_rejected() {
        let op = ObservationOperator::direct(10, 40).unwrap();
        let map = LocalizationScheme::FullMap(MapTensor::identity(40, 20));
        assert!(map.prepare(&op).is_err());
        assert!(transform_correlation(&LocalizationScheme::None, &op, &[0.0; 39], 0).is_err());
    }

    fn random_map(seed: u64) -> MapTensor {
        let mut r = rng_from(seed);
        MapTensor::new(6, 3, (0..6 * 6 * 3).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn map_layout_is_q_i_j_row_major() {
        let m = random_map(1);
        assert_eq!(m.get(2, 4, 1), m.entries()[(2 * 6 + 4) * 3 + 1]);
        let s = m.slice_for_obs(1);
        assert_eq!(s[(4, 2)], m.get(2, 4, 1));
    }

    #[test]
    fn scheme_files_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let meta = MapMetadata { k_train: 5, l_train: 500, t: 100, s: 1, obs_kind: "direct".into(), regressor_id: "etkf-500".into(), created: "test".into() };
        let map = LocalizationScheme::FullMap(random_map(2));
        let p = dir.path().join("map.json");
        save_scheme(&p, &map, 6, 3, &meta).unwrap();
        let (back, m2) = load_scheme(&p).unwrap();
        assert_eq!(m2, meta);
        match (&back, &map) {
            (LocalizationScheme::FullMap(a), LocalizationScheme::FullMap(b)) => {
                assert!(a.entries().iter().zip(b.entries()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            _ => panic!("variant changed"),
        }

        let mut r = rng_from(3);
        let diag = LocalizationScheme::DiagonalMap(DiagonalMap { weights: DenseMatrix::from_fn(6, 3, |_, _| r.gen()) });
        let pd = dir.path().join("diag.json");
        save_scheme(&pd, &diag, 6, 3, &meta).unwrap();
        assert_eq!(load_scheme(&pd).unwrap().0, diag);

        let gc = LocalizationScheme::gaspari_cohn(3.5).unwrap();
        let pg = dir.path().join("gc.json");
        save_scheme(&pg, &gc, 6, 3, &meta).unwrap();
        assert_eq!(load_scheme(&pg).unwrap().0, gc);
    }

    #[test]
    fn corrupt_scheme_files_fail_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("map.json");
        save_scheme(&p, &LocalizationScheme::FullMap(random_map(4)), 6, 3, &MapMetadata::default()).unwrap();

        let text = std::fs::read_to_string(&p).unwrap().replace("\"N\": 6", "\"N\": 7");
        std::fs::write(&p, text).unwrap();
        assert!(load_scheme(&p).is_err());

        save_scheme(&p, &LocalizationScheme::FullMap(random_map(4)), 6, 3, &MapMetadata::default()).unwrap();
        let bin = p.with_extension("bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_scheme(&p).is_err());
    }

    proptest::proptest! {
        #[test]
        fn gc_monotone_and_bounded(c in 0.5f64..12.0) {
            let mut prev = 1.0;
            for k in 0..=1000 {
                let d = 3.0 * c * k as f64 / 1000.0;
                let v = gaspari_cohn(d, c);
                proptest::prop_assert!(v <= prev + 1e-15);
                proptest::prop_assert!((0.0..=1.0).contains(&v));
                prev = v;
            }
        }

        #[test]
        fn full_map_transform_is_linear(seed in 0u64..200, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let op = ObservationOperator::direct(3, 6).unwrap();
            let scheme = LocalizationScheme::FullMap(random_map(seed));
            let mut r = rng_from(seed + 7);
            let u: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
            let tu = transform_correlation(&scheme, &op, &u, 2).unwrap();
            let tv = transform_correlation(&scheme, &op, &v, 2).unwrap();
            let tm = transform_correlation(&scheme, &op, &mix, 2).unwrap();
            for i in 0..6 {
                proptest::prop_assert!((tm[i] - (alpha * tu[i] + beta * tv[i])).abs() < 1e-12);
            }
        }
    }
}
