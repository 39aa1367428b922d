use crate::channel::LinkKind;
use crate::numerics::linalg::{ComplexVec, C64};
use crate::{Error, Result};

/// `op(h) = [Re h, Im h]`.
pub fn op(h: &ComplexVec) -> Vec<f64> {
    let s = h.as_slice();
    s.iter()
        .map(|z| z.re)
        .chain(s.iter().map(|z| z.im))
        .collect()
}

/// Inverse of [`op`].
pub fn unop(x: &[f64]) -> Result<ComplexVec> {
    if !x.len().is_multiple_of(2) {
        return Err(Error::shape("real layout must have even length"));
    }
    let l = x.len() / 2;
    Ok(ComplexVec::from_vec(
        (0..l).map(|a| C64::new(x[a], x[l + a])).collect(),
    ))
}

/// `V × 2L` matrix whose row `v` is `op(ĥ[λ−V+1+v])`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub kind: LinkKind,
    pub seq_len: usize,
    pub antennas: usize,
    pub data: Vec<f64>,
}

impl FeatureSequence {
    pub fn row(&self, v: usize) -> &[f64] {
        let w = 2 * self.antennas;
        &self.data[v * w..(v + 1) * w]
    }
}

/// Stack the last `v` estimates of `history` (oldest first).
pub fn build_features(history: &[ComplexVec], v: usize, kind: LinkKind) -> Result<FeatureSequence> {
    if history.len() < v || v == 0 {
        return Err(Error::InsufficientHistory {
            needed: v.max(1),
            available: history.len(),
        });
    }
    let l = history[0].len();
    let mut data = Vec::with_capacity(v * 2 * l);
    for h in &history[history.len() - v..] {
        if h.len() != l {
            return Err(Error::shape("history entries differ in antenna count"));
        }
        data.extend(op(h));
    }
    Ok(FeatureSequence {
        kind,
        seq_len: v,
        antennas: l,
        data,
    })
}

/// Training/evaluation records of one link kind, all flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSet {
    pub kind: LinkKind,
    pub seq_len: usize,
    pub antennas: usize,
    /// `[n, V, 2L]` history estimates.
    pub feats: Vec<f64>,
    /// `[n, 2L]` LS estimate at `λ + t_a`.
    pub labels: Vec<f64>,
    /// `[n, 2L]` noise-free channel at `λ + t_a`.
    pub truth: Vec<f64>,
    /// `E‖ĥ‖²` per link.
    pub theta: Vec<f64>,
    /// LS error variance per antenna.
    pub est_var: Vec<f64>,
    /// Correlation over one sample.
    pub rho_step: Vec<f64>,
    /// Correlation over the prediction horizon.
    pub rho_ahead: Vec<f64>,
}

impl LinkSet {
    pub fn new(kind: LinkKind, seq_len: usize, antennas: usize) -> Self {
        Self {
            kind,
            seq_len,
            antennas,
            feats: Vec::new(),
            labels: Vec::new(),
            truth: Vec::new(),
            theta: Vec::new(),
            est_var: Vec::new(),
            rho_step: Vec::new(),
            rho_ahead: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn width(&self) -> usize {
        2 * self.antennas
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        let n = self.seq_len * self.width();
        &self.feats[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> &[f64] {
        &self.labels[i * self.width()..(i + 1) * self.width()]
    }

    pub fn truth_at(&self, i: usize) -> &[f64] {
        &self.truth[i * self.width()..(i + 1) * self.width()]
    }

    pub fn sequence(&self, i: usize) -> FeatureSequence {
        FeatureSequence {
            kind: self.kind,
            seq_len: self.seq_len,
            antennas: self.antennas,
            data: self.feature(i).to_vec(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        feats: &[f64],
        label: &[f64],
        truth: &[f64],
        theta: f64,
        est_var: f64,
        rho_step: f64,
        rho_ahead: f64,
    ) -> Result<()> {
        let w = self.width();
        if feats.len() != self.seq_len * w || label.len() != w || truth.len() != w {
            return Err(Error::shape("link record does not match V × 2L"));
        }
        self.feats.extend_from_slice(feats);
        self.labels.extend_from_slice(label);
        self.truth.extend_from_slice(truth);
        self.theta.push(theta);
        self.est_var.push(est_var);
        self.rho_step.push(rho_step);
        self.rho_ahead.push(rho_ahead);
        Ok(())
    }

    /// Records at the given indices, in order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self::new(self.kind, self.seq_len, self.antennas);
        for &i in idx {
            out.feats.extend_from_slice(self.feature(i));
            out.labels.extend_from_slice(self.label(i));
            out.truth.extend_from_slice(self.truth_at(i));
            out.theta.push(self.theta[i]);
            out.est_var.push(self.est_var[i]);
            out.rho_step.push(self.rho_step[i]);
            out.rho_ahead.push(self.rho_ahead[i]);
        }
        out
    }

    /// Append all records of `other` (same dimensions).
    pub fn extend(&mut self, other: &LinkSet) -> Result<()> {
        if other.kind != self.kind
            || other.seq_len != self.seq_len
            || other.antennas != self.antennas
        {
            return Err(Error::shape("link sets differ in kind or dimensions"));
        }
        self.feats.extend_from_slice(&other.feats);
        self.labels.extend_from_slice(&other.labels);
        self.truth.extend_from_slice(&other.truth);
        self.theta.extend_from_slice(&other.theta);
        self.est_var.extend_from_slice(&other.est_var);
        self.rho_step.extend_from_slice(&other.rho_step);
        self.rho_ahead.extend_from_slice(&other.rho_ahead);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_layout_and_inverse() {
        let h = ComplexVec::from_vec(vec![C64::new(1.0, 2.0), C64::new(3.0, -1.0)]);
        assert_eq!(op(&h), vec![1.0, 3.0, 2.0, -1.0]);
        assert_eq!(unop(&op(&h)).unwrap(), h);
    }

    #[test]
    fn features_take_the_latest_window() {
        let hist: Vec<ComplexVec> = (0..5)
            .map(|t| ComplexVec::from_vec(vec![C64::new(t as f64, 0.0), C64::new(0.0, t as f64)]))
            .collect();
        let f = build_features(&hist, 3, LinkKind::Gtg).unwrap();
        assert_eq!(f.data.len(), 3 * 4);
        assert_eq!(f.row(0), &[2.0, 0.0, 0.0, 2.0]);
        assert_eq!(f.row(2), &[4.0, 0.0, 0.0, 4.0]);
        assert!(matches!(
            build_features(&hist, 6, LinkKind::Gtg),
            Err(Error::InsufficientHistory {
                needed: 6,
                available: 5
            })
        ));
    }
}
