//! Versioned binary checkpoints restoring surfels, the voxel field,
//! optimizer moments, the RNG and the iteration counters bit-for-bit.

use std::path::Path;

use nalgebra::{Vector2, Vector3, Vector4};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Surfel, Task};
use crate::sdf::VoxelSdfField;
use crate::Fp;

use super::adam::AdamState;
use super::trainer::{FieldOpt, SurfelOpt, Trainer};

const MAGIC: &[u8; 4] = b"SFCP";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(*v);
        }
    }
    fn adam(&mut self, s: &AdamState<Fp>) {
        self.u64(s.step);
        self.f64s(&s.m);
        self.f64s(&s.v);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::malformed(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > self.bytes.len() / 8 {
            return Err(Error::malformed(self.path, "implausible vector length"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn adam(&mut self) -> Result<AdamState<Fp>> {
        let step = self.u64()?;
        let m = self.f64s()?;
        let v = self.f64s()?;
        if m.len() != v.len() {
            return Err(Error::malformed(self.path, "moment length mismatch"));
        }
        Ok(AdamState { m, v, step })
    }
}

fn write_surfel(w: &mut Writer, s: &Surfel<Fp>) {
    for a in 0..3 {
        w.f64(s.center[a]);
    }
    for a in 0..4 {
        w.f64(s.rotation[a]);
    }
    w.f64(s.log_scale.x);
    w.f64(s.log_scale.y);
    w.f64(s.opacity_logit);
    w.f64(s.confidence_logit);
    w.u8(s.task.tag());
    w.u8(s.order as u8);
    w.u64(s.sh.len() as u64);
    for c in &s.sh {
        for a in 0..3 {
            w.f64(c[a]);
        }
    }
}

fn read_surfel(r: &mut Reader) -> Result<Surfel<Fp>> {
    let center = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
    let rotation = Vector4::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let log_scale = Vector2::new(r.f64()?, r.f64()?);
    let opacity_logit = r.f64()?;
    let confidence_logit = r.f64()?;
    let task = Task::from_tag(r.u8()?)
        .ok_or_else(|| Error::malformed(r.path, "bad task tag"))?;
    let order = r.u8()? as usize;
    if order > 3 {
        return Err(Error::malformed(r.path, "bad SH order"));
    }
    let n = r.u64()? as usize;
    if n != crate::geometry::sh_basis_count(order) {
        return Err(Error::malformed(r.path, "SH length does not match order"));
    }
    let sh = (0..n)
        .map(|_| Ok(Vector3::new(r.f64()?, r.f64()?, r.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Surfel {
        center,
        rotation,
        log_scale,
        opacity_logit,
        confidence_logit,
        sh,
        order,
        task,
    })
}

fn write_field(w: &mut Writer, f: &VoxelSdfField<Fp>) {
    w.u32(f.resolution as u32);
    w.u32(f.conf_resolution as u32);
    for a in 0..3 {
        w.f64(f.bounds_min[a]);
    }
    for a in 0..3 {
        w.f64(f.bounds_max[a]);
    }
    w.f64(f.log_sharpness);
    w.f64s(&f.sdf);
    w.u64(f.radiance.len() as u64);
    for v in &f.radiance {
        for a in 0..3 {
            w.f64(v[a]);
        }
    }
    w.f64s(&f.confidence_logit);
}

fn read_field(r: &mut Reader) -> Result<VoxelSdfField<Fp>> {
    let resolution = r.u32()? as usize;
    let conf_resolution = r.u32()? as usize;
    let bounds_min = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
    let bounds_max = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
    let log_sharpness = r.f64()?;
    let sdf = r.f64s()?;
    let nr = r.u64()? as usize;
    let radiance = (0..nr)
        .map(|_| Ok(Vector3::new(r.f64()?, r.f64()?, r.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    let confidence_logit = r.f64s()?;
    if sdf.len() != resolution.pow(3)
        || radiance.len() != resolution.pow(3)
        || confidence_logit.len() != conf_resolution.pow(3)
    {
        return Err(Error::malformed(r.path, "field grid size mismatch"));
    }
    Ok(VoxelSdfField {
        resolution,
        conf_resolution,
        bounds_min,
        bounds_max,
        sdf,
        radiance,
        confidence_logit,
        log_sharpness,
    })
}

/// Serialize the trainer's mutable state after `stage` completed.
pub fn save_checkpoint(path: &Path, trainer: &Trainer, stage: u8) -> Result<()> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u8(stage);
    w.u64(trainer.global_iter as u64);
    w.u64(trainer.skipped_grads as u64);
    w.0.extend_from_slice(&trainer.rng.get_seed());
    w.0.extend_from_slice(&trainer.rng.get_word_pos().to_le_bytes());

    w.u64(trainer.surfels.len() as u64);
    for s in &trainer.surfels {
        write_surfel(&mut w, s);
    }
    w.adam(&trainer.opt.position);
    w.adam(&trainer.opt.rotation);
    w.adam(&trainer.opt.log_scale);
    w.adam(&trainer.opt.opacity);
    w.adam(&trainer.opt.confidence);
    w.adam(&trainer.opt.sh);

    match (&trainer.field, &trainer.field_opt) {
        (Some(field), opt) => {
            w.u8(1);
            write_field(&mut w, field);
            match opt {
                Some(opt) => {
                    w.u8(1);
                    w.adam(&opt.sdf);
                    w.adam(&opt.radiance);
                    w.adam(&opt.confidence);
                    w.adam(&opt.sharpness);
                }
                None => w.u8(0),
            }
        }
        (None, _) => w.u8(0),
    }
    std::fs::write(path, w.0).map_err(|e| Error::io(path, e))
}

/// Restore into a trainer built for the same config and scene. Fails
/// without touching `trainer` on any structural error.
pub fn load_checkpoint(path: &Path, trainer: &mut Trainer) -> Result<u8> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::malformed(path, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::malformed(path, format!("unsupported version {version}")));
    }
    let stage = r.u8()?;
    let global_iter = r.u64()? as usize;
    let skipped = r.u64()? as usize;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());

    let n = r.u64()? as usize;
    if n > bytes.len() {
        return Err(Error::malformed(path, "implausible surfel count"));
    }
    let surfels = (0..n).map(|_| read_surfel(&mut r)).collect::<Result<Vec<_>>>()?;
    let opt = SurfelOpt {
        position: r.adam()?,
        rotation: r.adam()?,
        log_scale: r.adam()?,
        opacity: r.adam()?,
        confidence: r.adam()?,
        sh: r.adam()?,
        sh_triples: surfels.iter().map(|s| s.sh.len()).sum(),
    };
    let (field, field_opt) = if r.u8()? == 1 {
        let field = read_field(&mut r)?;
        let opt = if r.u8()? == 1 {
            Some(FieldOpt {
                sdf: r.adam()?,
                radiance: r.adam()?,
                confidence: r.adam()?,
                sharpness: r.adam()?,
            })
        } else {
            None
        };
        (Some(field), opt)
    } else {
        (None, None)
    };
    if r.pos != bytes.len() {
        return Err(Error::malformed(path, "trailing bytes"));
    }
    if !opt.matches(&surfels) {
        return Err(Error::malformed(path, "optimizer does not match surfels"));
    }

    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(word_pos);
    trainer.surfels = surfels;
    trainer.opt = opt;
    trainer.field = field;
    trainer.field_opt = field_opt;
    trainer.rng = rng;
    trainer.global_iter = global_iter;
    trainer.skipped_grads = skipped;
    Ok(stage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::shapes::{MaterialSpec, SceneShape, ShapeSpec};
    use crate::scene::{generate_scene, SceneSpec};
    use crate::train::config::TrainConfig;

    fn tiny_trainer() -> Trainer {
        let mut config = TrainConfig {
            init_surfels: 20,
            ..TrainConfig::default()
        };
        config.scene = SceneSpec {
            resolution: 16,
            view_count: 2,
            holdout_count: 1,
            shapes: vec![SceneShape {
                shape: ShapeSpec::Sphere {
                    center: [0.0; 3],
                    radius: 0.5,
                },
                material: MaterialSpec::default(),
            }],
            ..SceneSpec::default()
        };
        config.sdf.resolution = 8;
        let scene = generate_scene(&config.scene).unwrap();
        Trainer::new(config, scene).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let mut trainer = tiny_trainer();
        trainer.global_iter = 42;
        trainer.field = Some(
            VoxelSdfField::new(8, trainer.bounds.0, trainer.bounds.1).unwrap(),
        );
        save_checkpoint(&p1, &trainer, 2).unwrap();

        let mut restored = tiny_trainer();
        let stage = load_checkpoint(&p1, &mut restored).unwrap();
        assert_eq!(stage, 2);
        assert_eq!(restored.global_iter, 42);
        assert_eq!(restored.surfels, trainer.surfels);
        save_checkpoint(&p2, &restored, 2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_header_is_rejected_without_partial_state() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let trainer = tiny_trainer();
        save_checkpoint(&p, &trainer, 1).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[1] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        let mut other = tiny_trainer();
        let before = other.surfels.clone();
        assert!(load_checkpoint(&p, &mut other).is_err());
        assert_eq!(other.surfels, before);

        // Truncation is also structural.
        save_checkpoint(&p, &trainer, 1).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&p, &mut other).is_err());
    }

    #[test]
    fn restored_rng_continues_the_stream() {
        use rand::Rng;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let mut trainer = tiny_trainer();
        let _: f64 = trainer.rng.gen(); // advance past the start
        save_checkpoint(&p, &trainer, 1).unwrap();
        let expected: f64 = trainer.rng.gen();
        let mut restored = tiny_trainer();
        load_checkpoint(&p, &mut restored).unwrap();
        let got: f64 = restored.rng.gen();
        assert_eq!(got, expected);
    }
}
