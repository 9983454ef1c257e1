//! Principal-component reduction of log-mel frames.
//!
//! The basis is fitted on the union of frames of a small set of spectrograms
//! (normally the two endpoints of a morph pair) and then applied to any
//! spectrogram with the same number of mel bands.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::LogMelSpectrogram;
use crate::error::{Error, Result};

// Eigenvalues below this fraction of the largest count as zero when
// estimating rank.
const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PcaBasis {
    mean: DVector<f64>,
    /// `n_components x n_mels`, rows are unit principal axes.
    components: DMatrix<f64>,
    variances: Vec<f64>,
}

impl PcaBasis {
    pub fn fit(mels: &[&LogMelSpectrogram], n_components: usize) -> Result<Self> {
        let first = mels
            .first()
            .ok_or_else(|| Error::InvalidArgument("no spectrograms to fit".into()))?;
        let dim = first.n_mels();
        if mels.iter().any(|m| m.n_mels() != dim) {
            return Err(Error::ShapeMismatch("spectrograms differ in mel bands".into()));
        }
        if n_components == 0 || n_components > dim {
            return Err(Error::InvalidArgument(format!(
                "n_components must be in 1..={dim}, got {n_components}"
            )));
        }
        let n_frames: usize = mels.iter().map(|m| m.n_frames()).sum();
        if n_frames == 0 {
            return Err(Error::InvalidArgument("no frames to fit".into()));
        }

        let mut mean = DVector::zeros(dim);
        for m in mels {
            for row in m.values().row_iter() {
                mean += row.transpose();
            }
        }
        mean /= n_frames as f64;

        let mut cov = DMatrix::zeros(dim, dim);
        for m in mels {
            for row in m.values().row_iter() {
                let c = row.transpose() - &mean;
                cov.ger(1.0, &c, &c, 1.0);
            }
        }
        cov /= n_frames as f64;

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let largest = eig.eigenvalues[order[0]].max(0.0);
        let rank = if largest <= f64::MIN_POSITIVE {
            0
        } else {
            order
                .iter()
                .filter(|&&i| eig.eigenvalues[i] > RANK_RTOL * largest)
                .count()
        };
        if n_components > rank {
            return Err(Error::RankDeficient {
                requested: n_components,
                rank,
            });
        }

        let mut components = DMatrix::zeros(n_components, dim);
        let mut variances = Vec::with_capacity(n_components);
        for (r, &i) in order.iter().take(n_components).enumerate() {
            let mut axis = eig.eigenvectors.column(i).into_owned();
            // sign convention: largest-magnitude loading is positive
            let pivot = axis
                .iter()
                .enumerate()
                .fold((0, 0.0_f64), |best, (j, &v)| if v.abs() > best.1.abs() { (j, v) } else { best })
                .0;
            if axis[pivot] < 0.0 {
                axis.neg_mut();
            }
            components.set_row(r, &axis.transpose());
            variances.push(eig.eigenvalues[i]);
        }
        Ok(Self {
            mean,
            components,
            variances,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.variances
    }

    /// Projects every frame, giving `frames x n_components`.
    pub fn project(&self, mel: &LogMelSpectrogram) -> Result<DMatrix<f64>> {
        self.project_matrix(mel.values())
    }

    pub fn project_matrix(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if frames.ncols() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "basis fitted on {} bands, got {}",
                self.mean.len(),
                frames.ncols()
            )));
        }
        let mut centered = frames.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.components.transpose())
    }

    pub fn reconstruct(&self, reduced: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = reduced * &self.components;
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }
}

/// Fits one basis over all inputs and projects each of them onto it.
pub fn pca_reduce_mel(mels: &[LogMelSpectrogram], n_components: usize) -> Result<Vec<DMatrix<f64>>> {
    if let Some(first) = mels.first() {
        let shape = first.values().shape();
        if mels.iter().any(|m| m.values().shape() != shape) {
            return Err(Error::ShapeMismatch("spectrograms differ in frame shape".into()));
        }
    }
    let refs: Vec<&LogMelSpectrogram> = mels.iter().collect();
    let basis = PcaBasis::fit(&refs, n_components)?;
    mels.iter().map(|m| basis.project(m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::StftConfig;

    fn mel_from_rows(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> LogMelSpectrogram {
        LogMelSpectrogram::from_values(DMatrix::from_fn(rows, cols, f), StftConfig::default()).unwrap()
    }

    #[test]
    fn identical_inputs_reduce_identically() {
        let m = mel_from_rows(12, 8, |r, c| ((r * 7 + c * 3) % 11) as f64 + (r as f64 * 0.3).sin());
        let reduced = pca_reduce_mel(&[m.clone(), m], 2).unwrap();
        assert_eq!(reduced[0], reduced[1]);
        assert_eq!(reduced[0].shape(), (12, 2));
    }

    #[test]
    fn rank_one_frames_reconstruct_exactly() {
        let dir: Vec<f64> = (0..6).map(|c| (c as f64 + 1.0) * 0.5).collect();
        let offset: Vec<f64> = (0..6).map(|c| -(c as f64)).collect();
        let m = mel_from_rows(9, 6, |r, c| offset[c] + (r as f64 - 4.0) * dir[c]);
        let basis = PcaBasis::fit(&[&m], 1).unwrap();
        let back = basis.reconstruct(&basis.project(&m).unwrap());
        assert!((back - m.values()).abs().max() < 1e-9);
        assert!(matches!(
            PcaBasis::fit(&[&m], 2),
            Err(Error::RankDeficient { requested: 2, rank: 1 })
        ));
    }

    #[test]
    fn two_and_three_components_supported() {
        let a = mel_from_rows(20, 10, |r, c| ((r as f64) * 0.7 + c as f64).sin() * (c + 1) as f64);
        let b = mel_from_rows(20, 10, |r, c| ((r as f64) * 0.2 - c as f64).cos() + r as f64 * 0.1);
        for n in [2, 3] {
            let out = pca_reduce_mel(&[a.clone(), b.clone()], n).unwrap();
            assert_eq!(out.len(), 2);
            assert!(out.iter().all(|m| m.ncols() == n && m.nrows() == 20));
        }
    }

    #[test]
    fn sign_convention_and_orthonormal_axes() {
        let a = mel_from_rows(30, 5, |r, c| ((r * (c + 2)) % 7) as f64 - (c as f64) * 0.5);
        let basis = PcaBasis::fit(&[&a], 3).unwrap();
        let comps = basis.components();
        let gram = comps * comps.transpose();
        assert!((gram - DMatrix::identity(3, 3)).abs().max() < 1e-9);
        for row in comps.row_iter() {
            let pivot = row.iter().cloned().fold(0.0_f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(pivot > 0.0);
        }
        let v = basis.explained_variance();
        assert!(v.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = mel_from_rows(4, 5, |r, c| (r + c) as f64);
        let b = mel_from_rows(4, 6, |r, c| (r * c) as f64);
        assert!(pca_reduce_mel(&[a, b], 1).is_err());
    }
}
