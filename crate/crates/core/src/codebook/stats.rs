use serde::Serialize;

/// Classification-layer size under one-hot versus multi-hot output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompressionStats {
    pub feature_dim: usize,
    pub one_hot_classes: usize,
    pub code_len: usize,
    pub bias: bool,
    pub cls_params_onehot: u64,
    pub cls_params_multihot: u64,
    /// `1 - multihot / onehot`.
    pub ratio: f64,
}

impl CompressionStats {
    pub fn compute(
        code_len: usize,
        feature_dim: usize,
        one_hot_classes: usize,
        bias: bool,
    ) -> Self {
        let per_output = feature_dim as u64 + u64::from(bias);
        let onehot = per_output * one_hot_classes as u64;
        let multihot = per_output * code_len as u64;
        CompressionStats {
            feature_dim,
            one_hot_classes,
            code_len,
            bias,
            cls_params_onehot: onehot,
            cls_params_multihot: multihot,
            ratio: 1.0 - multihot as f64 / onehot as f64,
        }
    }
}

/// One-hot class count at which a length-`code_len` code achieves `ratio`.
pub fn classes_for_ratio(code_len: usize, ratio: f64) -> f64 {
    code_len as f64 / (1.0 - ratio)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handwritten_charset_ratio() {
        let s = CompressionStats::compute(384, 512, 3755, false);
        assert_eq!(s.cls_params_onehot, 512 * 3755);
        assert_eq!(s.cls_params_multihot, 512 * 384);
        assert!((s.ratio - (1.0 - 384.0 / 3755.0)).abs() < 1e-12);
        assert!((s.ratio - 0.8977).abs() < 5e-5);
    }

    #[test]
    fn equal_sizes_give_zero() {
        assert_eq!(CompressionStats::compute(384, 512, 384, true).ratio, 0.0);
    }

    #[test]
    fn bias_does_not_change_ratio() {
        let a = CompressionStats::compute(384, 512, 5189, false);
        let b = CompressionStats::compute(384, 512, 5189, true);
        assert!((a.ratio - b.ratio).abs() < 1e-15);
        assert_eq!(b.cls_params_multihot, 513 * 384);
    }

    #[test]
    fn back_solved_class_count() {
        let n = classes_for_ratio(384, 0.926);
        assert!((n - 5189.189).abs() < 1e-2);
        let s = CompressionStats::compute(384, 512, 5189, false);
        assert!((s.ratio - 0.926).abs() < 1e-4);
    }
}
