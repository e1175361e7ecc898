use std::path::Path;

use super::write_file;
use crate::error::{Error, Result};
use crate::model::SceneModel;

const MAGIC: &[u8; 8] = b"SEGSPLAT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Magic, little-endian format version, then the bincode-encoded scene. Every map in the
/// scene is ordered, so equal scenes encode to equal bytes.
pub fn encode_checkpoint(scene: &SceneModel) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bincode::serialize_into(&mut out, scene).map_err(|e| Error::format("checkpoint", e.to_string()))?;
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SceneModel> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::format("checkpoint", "missing magic header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("version {version}, this build reads version {CHECKPOINT_VERSION}"),
        ));
    }
    bincode::deserialize(&bytes[12..]).map_err(|e| Error::format("checkpoint", e.to_string()))
}

pub fn save_checkpoint(path: impl AsRef<Path>, scene: &SceneModel) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(scene)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SceneModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Camera, Gaussian, ObjectIds, TrackedMasks};
    use nalgebra::Vector3;

    #[test]
    fn round_trip_and_version_check() {
        let g = Gaussian::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.5, 0.6, 0.7), 0.05, 0.3)
            .with_ids(ObjectIds::new(1, 2, 3));
        let cam = Camera::look_at(Vector3::new(0.0, 0.0, -3.0), Vector3::zeros(), 30.0, 8, 8);
        let mut masks = TrackedMasks::new(8, 8, 1);
        masks.id_map_mut(0, crate::model::Granularity::Small).set(1, 1, 3);
        masks.rebuild_registry();
        let scene = SceneModel::new(vec![g], vec![cam], masks);
        let bytes = encode_checkpoint(&scene).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        assert_eq!(back.gaussians, scene.gaussians);

        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(decode_checkpoint(&wrong).is_err());
        assert!(decode_checkpoint(b"nope").is_err());
    }
}
