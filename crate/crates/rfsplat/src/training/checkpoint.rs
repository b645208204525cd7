//! Binary checkpoint: magic "WBGS", format version, config snapshot,
//! model metadata, Gaussian cloud, network weights, optimizer state, and
//! the iteration counter. All numeric payloads are 64-bit IEEE-754
//! little-endian, so a round trip is bitwise lossless.

use std::io::{Read, Write};
use std::path::Path;

use crate::dataset_io::NormStats;
use crate::em_feature_net::{init_params, EncodingConfig, NetConfig};
use crate::gaussian_field::GaussianCloud;
use crate::geom::Aabb;
use crate::scene::RxPose;
use crate::splat_renderer::RenderMode;

use super::adam::Adam;
use super::{DensifyAccum, ModelMeta, Optimizers, TrainConfig, TrainError, Trainer};

const MAGIC: &[u8; 4] = b"WBGS";
const VERSION: u32 = 1;

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.w.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }
    fn f64s(&mut self, vs: &[f64]) -> std::io::Result<()> {
        self.u64(vs.len() as u64)?;
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> std::io::Result<u8> {
        let mut b = [0u8; 1];
        self.r.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        self.r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64s(&mut self) -> std::io::Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io { path: path.display().to_string(), source }
}

pub fn save(trainer: &Trainer, path: &Path) -> Result<(), TrainError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = Writer { w: std::io::BufWriter::new(file) };
    (|| -> std::io::Result<()> {
        w.w.write_all(MAGIC)?;
        w.u32(VERSION)?;

        let c = &trainer.cfg;
        w.f64(c.lambda)?;
        w.u64(c.iterations)?;
        for lr in [c.lr_position, c.lr_scale, c.lr_rotation, c.lr_delta, c.lr_net] {
            w.f64(lr)?;
        }
        w.u64(c.densify_interval)?;
        w.u64(c.densify_until)?;
        w.f64(c.densify_grad_threshold)?;
        w.f64(c.scale_split_threshold)?;
        w.f64(c.prune_threshold)?;
        w.u64(c.reset_interval)?;
        w.u64(c.max_gaussians as u64)?;
        w.u64(c.seed)?;
        w.u8(match c.mode {
            RenderMode::PaperLiteral => 0,
            RenderMode::Alpha => 1,
        })?;
        w.f64(c.cutoff_sigmas)?;
        w.f64(c.transmittance_floor)?;
        w.u64(c.tile_size as u64)?;
        w.u64(c.loss_log_window as u64)?;
        w.u64(c.init_surface_points as u64)?;
        w.u64(c.init_volume_points as u64)?;
        w.u64(c.net.atten_width as u64)?;
        w.u64(c.net.atten_depth as u64)?;
        w.u64(c.net.h_dim as u64)?;
        w.u64(c.net.rad_width as u64)?;
        w.u64(c.net.rad_depth as u64)?;
        w.u64(c.l_pos as u64)?;
        w.u64(c.l_freq as u64)?;
        for v in trainer.net.enc.bounds.min.iter().chain(&trainer.net.enc.bounds.max) {
            w.f64(*v)?;
        }

        let m = &trainer.meta;
        w.u64(m.width as u64)?;
        w.u64(m.height as u64)?;
        for v in m.rx.position {
            w.f64(v)?;
        }
        for row in m.rx.frame {
            for v in row {
                w.f64(v)?;
            }
        }
        w.f64(m.norm.db_floor)?;
        w.f64(m.norm.db_ceil)?;

        let cloud = &trainer.cloud;
        w.u64(cloud.len() as u64)?;
        for v in &cloud.means {
            for x in v {
                w.f64(*x)?;
            }
        }
        for v in &cloud.log_scales {
            for x in v {
                w.f64(*x)?;
            }
        }
        for v in &cloud.rotations {
            for x in v {
                w.f64(*x)?;
            }
        }
        for x in &cloud.delta_latents {
            w.f64(*x)?;
        }

        w.f64s(&trainer.net.params_flat())?;

        for adam in [
            &trainer.opt.position,
            &trainer.opt.scale,
            &trainer.opt.rotation,
            &trainer.opt.delta,
            &trainer.opt.net,
        ] {
            w.u64(adam.t)?;
            w.f64s(&adam.m)?;
            w.f64s(&adam.v)?;
        }

        w.u64(trainer.iteration)?;
        w.u64(trainer.clamp_warnings)?;
        w.w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn load(path: &Path) -> Result<Trainer, TrainError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader { r: std::io::BufReader::new(file) };
    let mut magic = [0u8; 4];
    r.r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(TrainError::Checkpoint(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let version = r.u32().map_err(|e| io_err(path, e))?;
    if version != VERSION {
        return Err(TrainError::Checkpoint(format!("unsupported version {version}")));
    }

    (|| -> std::io::Result<Trainer> {
        let lambda = r.f64()?;
        let iterations = r.u64()?;
        let lr_position = r.f64()?;
        let lr_scale = r.f64()?;
        let lr_rotation = r.f64()?;
        let lr_delta = r.f64()?;
        let lr_net = r.f64()?;
        let densify_interval = r.u64()?;
        let densify_until = r.u64()?;
        let densify_grad_threshold = r.f64()?;
        let scale_split_threshold = r.f64()?;
        let prune_threshold = r.f64()?;
        let reset_interval = r.u64()?;
        let max_gaussians = r.u64()? as usize;
        let seed = r.u64()?;
        let mode = match r.u8()? {
            0 => RenderMode::PaperLiteral,
            _ => RenderMode::Alpha,
        };
        let cutoff_sigmas = r.f64()?;
        let transmittance_floor = r.f64()?;
        let tile_size = r.u64()? as usize;
        let loss_log_window = r.u64()? as usize;
        let init_surface_points = r.u64()? as usize;
        let init_volume_points = r.u64()? as usize;
        let net_cfg = NetConfig {
            atten_width: r.u64()? as usize,
            atten_depth: r.u64()? as usize,
            h_dim: r.u64()? as usize,
            rad_width: r.u64()? as usize,
            rad_depth: r.u64()? as usize,
        };
        let l_pos = r.u64()? as usize;
        let l_freq = r.u64()? as usize;
        let mut bmin = [0.0; 3];
        let mut bmax = [0.0; 3];
        for v in bmin.iter_mut() {
            *v = r.f64()?;
        }
        for v in bmax.iter_mut() {
            *v = r.f64()?;
        }

        let cfg = TrainConfig {
            lambda,
            iterations,
            lr_position,
            lr_scale,
            lr_rotation,
            lr_delta,
            lr_net,
            densify_interval,
            densify_until,
            densify_grad_threshold,
            scale_split_threshold,
            prune_threshold,
            reset_interval,
            max_gaussians,
            seed,
            mode,
            cutoff_sigmas,
            transmittance_floor,
            tile_size,
            loss_log_window,
            init_surface_points,
            init_volume_points,
            net: net_cfg,
            l_pos,
            l_freq,
        };

        let width = r.u64()? as usize;
        let height = r.u64()? as usize;
        let mut position = [0.0; 3];
        for v in position.iter_mut() {
            *v = r.f64()?;
        }
        let mut frame = [[0.0; 3]; 3];
        for row in frame.iter_mut() {
            for v in row.iter_mut() {
                *v = r.f64()?;
            }
        }
        let norm = NormStats { db_floor: r.f64()?, db_ceil: r.f64()? };
        let meta = ModelMeta { width, height, rx: RxPose { position, frame }, norm };

        let n = r.u64()? as usize;
        let mut cloud = GaussianCloud {
            means: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            delta_latents: Vec::with_capacity(n),
        };
        for _ in 0..n {
            cloud.means.push([r.f64()?, r.f64()?, r.f64()?]);
        }
        for _ in 0..n {
            cloud.log_scales.push([r.f64()?, r.f64()?, r.f64()?]);
        }
        for _ in 0..n {
            cloud.rotations.push([r.f64()?, r.f64()?, r.f64()?, r.f64()?]);
        }
        for _ in 0..n {
            cloud.delta_latents.push(r.f64()?);
        }

        let enc = EncodingConfig { l_pos, l_freq, bounds: Aabb { min: bmin, max: bmax } };
        let mut net = init_params(enc, cfg.net, 0);
        let flat = r.f64s()?;
        net.set_params_flat(&flat);

        let mut adams = Vec::with_capacity(5);
        for _ in 0..5 {
            let t = r.u64()?;
            let m = r.f64s()?;
            let v = r.f64s()?;
            let mut a = Adam::new(0);
            a.t = t;
            a.m = m;
            a.v = v;
            adams.push(a);
        }
        let net_adam = adams.pop().unwrap();
        let delta_adam = adams.pop().unwrap();
        let rotation_adam = adams.pop().unwrap();
        let scale_adam = adams.pop().unwrap();
        let position_adam = adams.pop().unwrap();

        let iteration = r.u64()?;
        let clamp_warnings = r.u64()?;

        let accum = DensifyAccum {
            pix_norm: vec![0.0; n],
            world: vec![[0.0; 3]; n],
            count: vec![0; n],
        };

        Ok(Trainer {
            cfg,
            cloud,
            net,
            meta,
            opt: Optimizers {
                position: position_adam,
                scale: scale_adam,
                rotation: rotation_adam,
                delta: delta_adam,
                net: net_adam,
            },
            accum,
            iteration,
            clamp_warnings,
        })
    })()
    .map_err(|e| io_err(path, e))
}
