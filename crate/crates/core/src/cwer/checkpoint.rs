use std::path::Path;

use super::model::param_shapes;
use super::{CwerConfig, CwerError, CwerModel, CwerParams};
use crate::container::{Blob, BlobData, Container, ContainerError};
use crate::numcore::Tensor;

/// Kind tag of network checkpoints.
pub const CHECKPOINT_KIND: &[u8; 4] = b"CWER";

impl From<ContainerError> for CwerError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::Checksum => CwerError::Checksum,
            ContainerError::Io(e) => CwerError::Io(e),
            other => CwerError::Format(other.to_string()),
        }
    }
}

pub(crate) fn to_container(model: &CwerModel) -> Container {
    let mut blobs = Vec::new();
    for (n, net) in model.nets.iter().enumerate() {
        for (name, t) in net.named() {
            blobs.push(Blob {
                name: format!("net{n}.{name}"),
                shape: t.shape().to_vec(),
                data: BlobData::F32(t.data().to_vec()),
            });
        }
    }
    Container {
        kind: *CHECKPOINT_KIND,
        config: serde_json::to_string(&model.config).expect("config serializes"),
        blobs,
    }
}

pub(crate) fn to_bytes(model: &CwerModel) -> Vec<u8> {
    to_container(model).to_bytes()
}

/// Parses and verifies a checkpoint. With `expected`, the stored config
/// must equal it.
pub(crate) fn from_bytes(bytes: &[u8], expected: Option<&CwerConfig>) -> Result<CwerModel, CwerError> {
    let c = Container::from_bytes(bytes, Some(CHECKPOINT_KIND))?;
    let config: CwerConfig =
        serde_json::from_str(&c.config).map_err(|e| CwerError::Format(format!("config block: {e}")))?;
    config.validate()?;
    if let Some(want) = expected {
        if want != &config {
            return Err(CwerError::ConfigMismatch {
                expected: serde_json::to_string(want).expect("config serializes"),
                found: c.config.clone(),
            });
        }
    }
    let shapes = param_shapes(&config);
    if c.blobs.len() != shapes.len() * config.n_nets() {
        return Err(CwerError::Format(format!(
            "{} parameter blobs stored, config needs {}",
            c.blobs.len(),
            shapes.len() * config.n_nets()
        )));
    }
    let mut blobs = c.blobs.into_iter();
    let mut nets = Vec::with_capacity(config.n_nets());
    for n in 0..config.n_nets() {
        let mut net = CwerParams::zeros(&config);
        for ((name, shape), slot) in shapes.iter().zip(net.params_mut()) {
            let b = blobs.next().expect("count checked");
            let want = format!("net{n}.{name}");
            let BlobData::F32(data) = b.data else {
                return Err(CwerError::Format(format!("parameter {} is not f32", b.name)));
            };
            if b.name != want || &b.shape != shape {
                return Err(CwerError::Format(format!(
                    "parameter {} {:?} does not match expected {want} {shape:?}",
                    b.name, b.shape
                )));
            }
            *slot = Tensor::from_vec(shape, data)?;
        }
        if !net.is_finite() {
            return Err(CwerError::Format("checkpoint holds non-finite parameters".into()));
        }
        nets.push(net);
    }
    Ok(CwerModel { config, nets })
}

pub fn save_model(model: &CwerModel, path: &Path) -> Result<(), CwerError> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path, expected: Option<&CwerConfig>) -> Result<CwerModel, CwerError> {
    from_bytes(&std::fs::read(path)?, expected)
}
