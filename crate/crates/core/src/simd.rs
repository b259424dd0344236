//! Runtime CPU feature detection for the vectorized kernels.
//!
//! Vectorized and scalar paths perform the same IEEE operations in the same
//! order, so results never depend on the path taken.

#[cfg(target_arch = "x86_64")]
pub(crate) fn has_avx2() -> bool {
    use std::sync::OnceLock;
    static AVX2: OnceLock<bool> = OnceLock::new();
    *AVX2.get_or_init(|| std::is_x86_feature_detected!("avx2"))
}
