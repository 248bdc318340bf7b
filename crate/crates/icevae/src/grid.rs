//! Grid geometry, area weighting, land masking, and the polar fold/unfold
//! reshaping applied before fields enter the network.
//!
//! The fold splits the longitude axis in half, reverses the second half in
//! latitude and stacks it on top of the first, so a `n_lat x n_lon` band
//! around the pole becomes a `2*n_lat x n_lon/2` map resembling a North
//! Polar projection.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};

/// Mean Earth radius in km used for cell areas.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Regular latitude/longitude grid covering a polar cap.
///
/// Row 0 is the southernmost latitude band (`lat_start_deg`), rows increase
/// poleward. `land_mask` is `true` on land/invalid cells and is constant
/// across time, lead, and member.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub n_lat: usize,
    pub n_lon: usize,
    pub lat_start_deg: f64,
    pub cell_size_deg: f64,
    pub land_mask: Array2<bool>,
    pub cell_area: Array2<f64>,
}

/// Serializable grid descriptor embedded in cube file headers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub n_lat: usize,
    pub n_lon: usize,
    pub lat_start_deg: f64,
    pub cell_size_deg: f64,
    /// Row-major land mask, '1' = land.
    pub land_mask: String,
}

impl PolarGrid {
    /// Build a grid from an explicit land mask; cell areas are computed as
    /// R^2 * dphi * dlambda * cos(phi_center) on the sphere.
    pub fn new(
        n_lat: usize,
        n_lon: usize,
        lat_start_deg: f64,
        cell_size_deg: f64,
        land_mask: Array2<bool>,
    ) -> Result<Self> {
        if n_lon % 2 != 0 {
            return Err(IceError::OddLongitudes(n_lon));
        }
        if land_mask.dim() != (n_lat, n_lon) {
            return Err(IceError::ShapeMismatch {
                expected: format!("{n_lat}x{n_lon}"),
                got: format!("{:?}", land_mask.dim()),
            });
        }
        let lat_end = lat_start_deg + n_lat as f64 * cell_size_deg;
        if lat_end > 90.0 + 1e-9 {
            return Err(IceError::InvalidConfig(format!(
                "grid crosses the pole: top edge at {lat_end} degrees"
            )));
        }
        let dphi = cell_size_deg.to_radians();
        let dlam = cell_size_deg.to_radians();
        let mut cell_area = Array2::zeros((n_lat, n_lon));
        for i in 0..n_lat {
            let lat_center = lat_start_deg + (i as f64 + 0.5) * cell_size_deg;
            let a = EARTH_RADIUS_KM * EARTH_RADIUS_KM * dphi * dlam * lat_center.to_radians().cos();
            for j in 0..n_lon {
                cell_area[[i, j]] = a;
            }
        }
        Ok(Self {
            n_lat,
            n_lon,
            lat_start_deg,
            cell_size_deg,
            land_mask,
            cell_area,
        })
    }

    /// Full-scale grid matching the 50 x 360 cap north of 50N (folds to
    /// 100 x 180); 50 rows spanning 50-90 degrees, ocean everywhere.
    pub fn full_scale() -> Self {
        Self::new(50, 360, 50.0, 0.8, Array2::from_elem((50, 360), false)).unwrap()
    }

    /// Desk-scale grid with a synthetic land mask: `land_fraction` of the area
    /// covered by random blobs, plus an optional pole hole. Latitude span is
    /// stretched so the cap still reaches the pole.
    pub fn synthetic(
        n_lat: usize,
        n_lon: usize,
        land_fraction: f64,
        pole_hole: bool,
        seed: u64,
    ) -> Result<Self> {
        if n_lon % 2 != 0 {
            return Err(IceError::OddLongitudes(n_lon));
        }
        let cell_size = 40.0 / n_lat as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut mask = Array2::from_elem((n_lat, n_lon), false);
        // random blobs until the requested land fraction is reached
        let total = (n_lat * n_lon) as f64;
        let mut covered = 0usize;
        while (covered as f64) < land_fraction * total {
            let ci = rng.gen_range(0..n_lat) as i64;
            let cj = rng.gen_range(0..n_lon) as i64;
            let r = rng.gen_range(1..=(1 + n_lat as i64 / 8));
            for i in (ci - r).max(0)..(ci + r + 1).min(n_lat as i64) {
                for j in cj - r..cj + r + 1 {
                    let jw = j.rem_euclid(n_lon as i64) as usize;
                    let d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
                    if d2 <= r * r && !mask[[i as usize, jw]] {
                        mask[[i as usize, jw]] = true;
                        covered += 1;
                    }
                }
            }
        }
        if pole_hole {
            // top two latitude rows masked, as with satellite orbit coverage
            let rows = 2.min(n_lat);
            for i in n_lat - rows..n_lat {
                for j in 0..n_lon {
                    mask[[i, j]] = true;
                }
            }
        }
        Self::new(n_lat, n_lon, 50.0, cell_size, mask)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_lat, self.n_lon)
    }

    /// Shape after the polar fold: (2*n_lat, n_lon/2).
    pub fn folded_shape(&self) -> (usize, usize) {
        (2 * self.n_lat, self.n_lon / 2)
    }

    pub fn n_ocean(&self) -> usize {
        self.land_mask.iter().filter(|m| !**m).count()
    }

    pub fn descriptor(&self) -> GridDescriptor {
        GridDescriptor {
            n_lat: self.n_lat,
            n_lon: self.n_lon,
            lat_start_deg: self.lat_start_deg,
            cell_size_deg: self.cell_size_deg,
            land_mask: self
                .land_mask
                .iter()
                .map(|m| if *m { '1' } else { '0' })
                .collect(),
        }
    }

    pub fn from_descriptor(d: &GridDescriptor) -> Result<Self> {
        if d.land_mask.len() != d.n_lat * d.n_lon {
            return Err(IceError::MalformedHeader(format!(
                "land mask length {} does not match {}x{}",
                d.land_mask.len(),
                d.n_lat,
                d.n_lon
            )));
        }
        let bits: Vec<bool> = d
            .land_mask
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(IceError::MalformedHeader(format!(
                    "invalid land mask character {other:?}"
                ))),
            })
            .collect::<Result<_>>()?;
        let mask = Array2::from_shape_vec((d.n_lat, d.n_lon), bits)
            .map_err(|e| IceError::MalformedHeader(e.to_string()))?;
        Self::new(d.n_lat, d.n_lon, d.lat_start_deg, d.cell_size_deg, mask)
    }
}

/// A field reshaped by the polar fold, with its validity mask
/// (the folded complement of the land mask).
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedField {
    pub values: Array2<f32>,
    pub valid_mask: Array2<bool>,
}

/// Map a folded row/col index back to the source (lat, lon) index.
fn fold_source(i: usize, j: usize, n_lat: usize, half: usize) -> (usize, usize) {
    if i < n_lat {
        // second longitudinal half, reversed in latitude, stacked on top
        (n_lat - 1 - i, j + half)
    } else {
        (i - n_lat, j)
    }
}

/// Fold an `n_lat x n_lon` field into a `2*n_lat x n_lon/2` polar map.
pub fn fold_polar(field: ArrayView2<f32>, grid: &PolarGrid) -> Result<FoldedField> {
    if grid.n_lon % 2 != 0 {
        return Err(IceError::OddLongitudes(grid.n_lon));
    }
    if field.dim() != (grid.n_lat, grid.n_lon) {
        return Err(IceError::ShapeMismatch {
            expected: format!("{}x{}", grid.n_lat, grid.n_lon),
            got: format!("{:?}", field.dim()),
        });
    }
    let half = grid.n_lon / 2;
    let (fh, fw) = grid.folded_shape();
    let mut values = Array2::zeros((fh, fw));
    let mut valid = Array2::from_elem((fh, fw), false);
    for i in 0..fh {
        for j in 0..fw {
            let (si, sj) = fold_source(i, j, grid.n_lat, half);
            values[[i, j]] = field[[si, sj]];
            valid[[i, j]] = !grid.land_mask[[si, sj]];
        }
    }
    Ok(FoldedField {
        values,
        valid_mask: valid,
    })
}

/// Exact inverse of [`fold_polar`].
pub fn unfold_polar(folded: &FoldedField, grid: &PolarGrid) -> Result<Array2<f32>> {
    let (fh, fw) = grid.folded_shape();
    if folded.values.dim() != (fh, fw) {
        return Err(IceError::ShapeMismatch {
            expected: format!("{fh}x{fw}"),
            got: format!("{:?}", folded.values.dim()),
        });
    }
    let half = grid.n_lon / 2;
    let mut out = Array2::zeros((grid.n_lat, grid.n_lon));
    for i in 0..fh {
        for j in 0..fw {
            let (si, sj) = fold_source(i, j, grid.n_lat, half);
            out[[si, sj]] = folded.values[[i, j]];
        }
    }
    Ok(out)
}

/// Unfold an arbitrary f32 array of folded shape without a validity mask.
pub fn unfold_values(values: ArrayView2<f32>, grid: &PolarGrid) -> Result<Array2<f32>> {
    let folded = FoldedField {
        values: values.to_owned(),
        valid_mask: Array2::from_elem(values.dim(), true),
    };
    unfold_polar(&folded, grid)
}

/// Area-weighted mean of `field` over cells where `valid` is true.
pub fn area_weighted_mean(
    field: ArrayView2<f64>,
    weights: ArrayView2<f64>,
    valid: ArrayView2<bool>,
) -> Result<f64> {
    if field.dim() != weights.dim() || field.dim() != valid.dim() {
        return Err(IceError::ShapeMismatch {
            expected: format!("{:?}", field.dim()),
            got: format!("{:?} / {:?}", weights.dim(), valid.dim()),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((f, w), v) in field.iter().zip(weights.iter()).zip(valid.iter()) {
        if *v {
            num += f * w;
            den += w;
        }
    }
    if den == 0.0 {
        return Err(IceError::AllMasked);
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ocean_grid(n_lat: usize, n_lon: usize) -> PolarGrid {
        PolarGrid::new(
            n_lat,
            n_lon,
            50.0,
            40.0 / n_lat as f64,
            Array2::from_elem((n_lat, n_lon), false),
        )
        .unwrap()
    }

    #[test]
    fn fold_shape_full_scale() {
        let grid = PolarGrid::full_scale();
        let field = Array2::from_elem((50, 360), 0.5f32);
        let folded = fold_polar(field.view(), &grid).unwrap();
        assert_eq!(folded.values.dim(), (100, 180));
    }

    #[test]
    fn fold_small_index_mapping() {
        // brute-force oracle for a 4x8 field with values 1..32
        let grid = ocean_grid(4, 8);
        let field = Array2::from_shape_fn((4, 8), |(i, j)| (i * 8 + j + 1) as f32);
        let folded = fold_polar(field.view(), &grid).unwrap();
        assert_eq!(folded.values.dim(), (8, 4));
        // top half: latitude-reversed columns 4..7
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(folded.values[[i, j]], field[[3 - i, j + 4]]);
            }
        }
        // bottom half: columns 0..3 unchanged
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(folded.values[[i + 4, j]], field[[i, j]]);
            }
        }
        let back = unfold_polar(&folded, &grid).unwrap();
        assert_eq!(back, field);
    }

    #[test]
    fn fold_is_bijection() {
        let grid = ocean_grid(6, 12);
        let field = Array2::from_shape_fn((6, 12), |(i, j)| (i * 12 + j) as f32);
        let folded = fold_polar(field.view(), &grid).unwrap();
        let mut seen: Vec<f32> = folded.values.iter().copied().collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected: Vec<f32> = (0..72).map(|v| v as f32).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn fold_rejects_bad_shapes() {
        let grid = ocean_grid(4, 8);
        let field = Array2::from_elem((4, 6), 0.0f32);
        assert!(matches!(
            fold_polar(field.view(), &grid),
            Err(IceError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            PolarGrid::new(4, 7, 50.0, 1.0, Array2::from_elem((4, 7), false)),
            Err(IceError::OddLongitudes(7))
        ));
    }

    #[test]
    fn constant_field_unfolds_to_constant() {
        let grid = ocean_grid(4, 8);
        let field = Array2::from_elem((4, 8), 0.37f32);
        let folded = fold_polar(field.view(), &grid).unwrap();
        let back = unfold_polar(&folded, &grid).unwrap();
        assert!(back.iter().all(|v| *v == 0.37));
    }

    #[test]
    fn weighted_mean_hand_case() {
        let field = ndarray::arr2(&[[0.0, 1.0]]);
        let weights = ndarray::arr2(&[[1.0, 3.0]]);
        let valid = ndarray::arr2(&[[true, true]]);
        let m = area_weighted_mean(field.view(), weights.view(), valid.view()).unwrap();
        assert!((m - 0.75).abs() < 1e-12);
    }

    #[test]
    fn weighted_mean_constant_and_mask() {
        let field = ndarray::arr2(&[[2.5, 2.5], [2.5, 9.0]]);
        let weights = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let valid = ndarray::arr2(&[[true, true], [true, false]]);
        let m = area_weighted_mean(field.view(), weights.view(), valid.view()).unwrap();
        assert!((m - 2.5).abs() < 1e-12);

        let none = ndarray::arr2(&[[false, false], [false, false]]);
        assert!(matches!(
            area_weighted_mean(field.view(), weights.view(), none.view()),
            Err(IceError::AllMasked)
        ));
    }

    #[test]
    fn cell_area_decreases_poleward() {
        let grid = PolarGrid::full_scale();
        for i in 1..grid.n_lat {
            assert!(grid.cell_area[[i, 0]] < grid.cell_area[[i - 1, 0]]);
        }
        assert!(grid.cell_area.iter().all(|a| *a > 0.0));
    }

    #[test]
    fn descriptor_round_trip() {
        let grid = PolarGrid::synthetic(8, 16, 0.2, true, 42).unwrap();
        let d = grid.descriptor();
        let back = PolarGrid::from_descriptor(&d).unwrap();
        assert_eq!(grid, back);
    }

    #[test]
    fn synthetic_grid_has_land_and_ocean() {
        let grid = PolarGrid::synthetic(16, 32, 0.15, true, 7).unwrap();
        let land = grid.land_mask.iter().filter(|m| **m).count();
        assert!(land > 0);
        assert!(grid.n_ocean() > 0);
        // pole hole rows are fully masked
        for j in 0..grid.n_lon {
            assert!(grid.land_mask[[grid.n_lat - 1, j]]);
        }
    }
}
