use std::path::Path;

use crate::geom::io::{load_mask_png, load_pfm, save_mask_png, save_pfm, Pfm};
use crate::geom::{angle_deg, MaskBuffer, Vec3};
use crate::{Error, Result};

/// First and second surface normals for every pixel of one view, in world
/// coordinates, with the silhouette (`valid`) and total internal reflection
/// (`tir`) masks. Invalid pixels hold zero vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMapPair {
    pub width: usize,
    pub height: usize,
    pub n1: Vec<Vec3>,
    pub n2: Vec<Vec3>,
    pub valid: MaskBuffer,
    pub tir: MaskBuffer,
}

impl NormalMapPair {
    pub fn empty(width: usize, height: usize) -> Self {
        NormalMapPair {
            width,
            height,
            n1: vec![Vec3::zeros(); width * height],
            n2: vec![Vec3::zeros(); width * height],
            valid: MaskBuffer::new(width, height),
            tir: MaskBuffer::new(width, height),
        }
    }

    /// Marks `(i, j)` valid with the given normals (normalized here).
    pub fn set(&mut self, i: usize, j: usize, n1: Vec3, n2: Vec3) {
        let idx = j * self.width + i;
        self.n1[idx] = n1.normalize();
        self.n2[idx] = n2.normalize();
        self.valid.data[idx] = true;
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Valid pixel indices in row-major order.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.num_pixels()).filter(|&i| self.valid.data[i]).collect()
    }

    /// Checks unit length on valid pixels and `tir ⊆ valid`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        for idx in 0..self.num_pixels() {
            if self.tir.data[idx] && !self.valid.data[idx] {
                return Err(Error::Consistency(format!("pixel {idx} is TIR but not valid")));
            }
            if self.valid.data[idx]
                && ((self.n1[idx].norm() - 1.0).abs() > tol || (self.n2[idx].norm() - 1.0).abs() > tol)
            {
                return Err(Error::Consistency(format!("pixel {idx} has a non-unit normal")));
            }
        }
        Ok(())
    }

    /// Writes `<prefix>_n1.pfm`, `<prefix>_n2.pfm`, `<prefix>_valid.png` and
    /// `<prefix>_tir.png` into `dir`.
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<()> {
        for (name, map) in [("n1", &self.n1), ("n2", &self.n2)] {
            let pfm = Pfm {
                width: self.width,
                height: self.height,
                channels: 3,
                data: map.iter().flat_map(|n| [n.x as f32, n.y as f32, n.z as f32]).collect(),
            };
            save_pfm(&dir.join(format!("{prefix}_{name}.pfm")), &pfm)?;
        }
        save_mask_png(&dir.join(format!("{prefix}_valid.png")), &self.valid)?;
        save_mask_png(&dir.join(format!("{prefix}_tir.png")), &self.tir)?;
        Ok(())
    }

    pub fn load(dir: &Path, prefix: &str) -> Result<Self> {
        let read = |name: &str| -> Result<(usize, usize, Vec<Vec3>)> {
            let pfm = load_pfm(&dir.join(format!("{prefix}_{name}.pfm")))?;
            if pfm.channels != 3 {
                return Err(Error::Argument(format!("{prefix}_{name}.pfm must have 3 channels")));
            }
            let v = pfm
                .data
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
                .collect();
            Ok((pfm.width, pfm.height, v))
        };
        let (w, h, n1) = read("n1")?;
        let (w2, h2, n2) = read("n2")?;
        let valid = load_mask_png(&dir.join(format!("{prefix}_valid.png")))?;
        let tir = load_mask_png(&dir.join(format!("{prefix}_tir.png")))?;
        if (w, h) != (w2, h2) || (w, h) != (valid.width, valid.height) || (w, h) != (tir.width, tir.height) {
            return Err(Error::Argument(format!("normal map files for {prefix} disagree in size")));
        }
        // f32 storage: renormalize valid normals
        let fix = |v: Vec<Vec3>| -> Vec<Vec3> {
            v.into_iter()
                .enumerate()
                .map(|(i, n)| if valid.data[i] && n.norm() > 0.0 { n.normalize() } else { n })
                .collect()
        };
        Ok(NormalMapPair {
            width: w,
            height: h,
            n1: fix(n1),
            n2: fix(n2),
            valid,
            tir,
        })
    }
}

/// Mean and median of a set of angles in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AngleStats {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub count: usize,
}

/// Mean and median of `angles` (degrees); zeros for an empty set.
pub fn angle_stats(angles: &[f64]) -> AngleStats {
    if angles.is_empty() {
        return AngleStats::default();
    }
    let mut sorted = angles.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    AngleStats {
        mean_deg: crate::parallel::tree_sum(&sorted) / n as f64,
        median_deg: median,
        count: n,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalLoss {
    /// `Σ ‖N¹ − N̂¹‖² + ‖N² − N̂²‖²` over valid pixels.
    pub l2: f64,
    pub n1: AngleStats,
    pub n2: AngleStats,
}

/// Squared L2 distance between predicted and reference normal maps, with
/// angular error statistics. Both maps must share the same valid mask.
pub fn normal_angle_loss(pred: &NormalMapPair, gt: &NormalMapPair) -> Result<NormalLoss> {
    if pred.valid != gt.valid {
        return Err(Error::Argument("normal_angle_loss: valid masks differ".into()));
    }
    let idx = pred.valid_indices();
    let terms: Vec<f64> = idx
        .iter()
        .map(|&i| (pred.n1[i] - gt.n1[i]).norm_squared() + (pred.n2[i] - gt.n2[i]).norm_squared())
        .collect();
    let a1: Vec<f64> = idx.iter().map(|&i| angle_deg(&pred.n1[i], &gt.n1[i])).collect();
    let a2: Vec<f64> = idx.iter().map(|&i| angle_deg(&pred.n2[i], &gt.n2[i])).collect();
    Ok(NormalLoss {
        l2: crate::parallel::tree_sum(&terms),
        n1: angle_stats(&a1),
        n2: angle_stats(&a2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> NormalMapPair {
        let mut p = NormalMapPair::empty(3, 2);
        for j in 0..2 {
            for i in 0..3 {
                p.set(i, j, Vec3::new(i as f64, j as f64, 1.0), Vec3::new(0.0, 0.0, -1.0));
            }
        }
        p
    }

    #[test]
    fn identical_maps_have_zero_loss() {
        let p = pair();
        let l = normal_angle_loss(&p, &p).unwrap();
        assert_eq!(l.l2, 0.0);
        assert_eq!(l.n1.mean_deg, 0.0);
        assert_eq!(l.n2.median_deg, 0.0);
    }

    #[test]
    fn right_angle_pixel_contributes_two() {
        let mut a = NormalMapPair::empty(1, 1);
        a.set(0, 0, Vec3::x(), Vec3::z());
        let mut b = a.clone();
        b.n1[0] = Vec3::y();
        let l = normal_angle_loss(&a, &b).unwrap();
        assert!((l.l2 - 2.0).abs() < 1e-12);
        assert!((l.n1.mean_deg - 90.0).abs() < 1e-9);
    }

    #[test]
    fn angular_stats_match_arccos() {
        let a = pair();
        let mut b = a.clone();
        for (k, n) in b.n1.iter_mut().enumerate() {
            *n = (*n + Vec3::new(0.05 * k as f64, 0.0, 0.0)).normalize();
        }
        let l = normal_angle_loss(&b, &a).unwrap();
        let mut direct: Vec<f64> = (0..6)
            .map(|k| a.n1[k].dot(&b.n1[k]).clamp(-1.0, 1.0).acos().to_degrees())
            .collect();
        let mean = direct.iter().sum::<f64>() / 6.0;
        direct.sort_by(f64::total_cmp);
        assert!((l.n1.mean_deg - mean).abs() < 1e-6);
        assert!((l.n1.median_deg - 0.5 * (direct[2] + direct[3])).abs() < 1e-6);
    }

    #[test]
    fn mask_mismatch_is_an_error() {
        let a = pair();
        let mut b = a.clone();
        b.valid.data[0] = false;
        assert!(normal_angle_loss(&a, &b).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = pair();
        p.tir.data[2] = true;
        p.save(dir.path(), "view0").unwrap();
        let back = NormalMapPair::load(dir.path(), "view0").unwrap();
        assert_eq!(back.valid, p.valid);
        assert_eq!(back.tir, p.tir);
        for k in 0..6 {
            assert!((back.n1[k] - p.n1[k]).norm() < 1e-6);
        }
    }
}
