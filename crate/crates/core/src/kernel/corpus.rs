//! Built-in kernel corpus, shipped as kernel files under `data/kernels/`.

use std::path::Path;

use super::{KernelError, KernelGraph};

const BUILTIN: [(&str, &str); 11] = [
    ("fir", include_str!("../../data/kernels/fir.json")),
    ("fft", include_str!("../../data/kernels/fft.json")),
    ("latnrm", include_str!("../../data/kernels/latnrm.json")),
    ("spmv", include_str!("../../data/kernels/spmv.json")),
    ("conv", include_str!("../../data/kernels/conv.json")),
    ("relu", include_str!("../../data/kernels/relu.json")),
    ("mvt", include_str!("../../data/kernels/mvt.json")),
    ("gemm", include_str!("../../data/kernels/gemm.json")),
    ("embedded_composite", include_str!("../../data/kernels/embedded_composite.json")),
    ("ml_composite", include_str!("../../data/kernels/ml_composite.json")),
    ("hpc_composite", include_str!("../../data/kernels/hpc_composite.json")),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

pub fn builtin_kernel(name: &str) -> Option<KernelGraph> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| KernelGraph::from_json(text).expect("built-in kernels are valid"))
}

/// Resolves a built-in kernel name, falling back to a kernel file path.
pub fn load_kernel(name_or_path: &str) -> Result<KernelGraph, KernelError> {
    if let Some(k) = builtin_kernel(name_or_path) {
        return Ok(k);
    }
    let path = Path::new(name_or_path);
    if path.is_file() {
        return KernelGraph::from_path(path);
    }
    Err(KernelError::UnknownKernel(name_or_path.to_string()))
}
