//! Dataset packing and loading: batched `.npy` files under the family
//! naming conventions, plus a JSON manifest with content checksums.
//!
//! Velocity batches are stored as `(batch, 1, nz, nx)` and seismic batches
//! as `(batch, ns, nt_stored, nr)`. Layer-based families name their files
//! `vel_{n}_1_{i}.npy` / `seis_{n}_1_{i}.npy` with `n` the configured layer
//! count and `i` counting files from 0; the flat `data{n}.npy` /
//! `model{n}.npy` convention counts from 1. The manifest is written last so
//! its presence marks a complete directory, and it carries no timestamps:
//! regenerating with the same seed produces byte-identical output.

pub mod npy;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, ArrayD, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{AcquisitionGeometry, SeismicGather, VelocityMap};
use crate::synth::{Family, GeneratorConfig};

pub use npy::{from_npy_bytes, read_npy, to_npy_bytes, write_npy};

/// Name of the manifest file inside a dataset directory.
pub const MANIFEST_NAME: &str = "manifest.json";

/// File-naming convention for a dataset directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NamingScheme {
    /// `data{n}.npy` (seismic) and `model{n}.npy` (velocity), n from 1.
    VelStyle,
    /// `seis_{n_layers}_1_{i}.npy` / `vel_{n_layers}_1_{i}.npy`, i from 0.
    Fault { n_layers: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub samples_per_file: usize,
    pub naming: NamingScheme,
}

impl DatasetLayout {
    /// Convention used by the reference datasets: 500 samples per file,
    /// naming picked by family.
    pub fn for_family(root: impl Into<PathBuf>, family: Family, n_layers: usize) -> Self {
        let naming = if family.is_fault() {
            NamingScheme::Fault { n_layers }
        } else {
            NamingScheme::VelStyle
        };
        DatasetLayout {
            root: root.into(),
            samples_per_file: 500,
            naming,
        }
    }

    /// Velocity-file name for the 0-based file index.
    pub fn velocity_name(&self, file_idx: usize) -> String {
        match self.naming {
            NamingScheme::VelStyle => format!("model{}.npy", file_idx + 1),
            NamingScheme::Fault { n_layers } => format!("vel_{n_layers}_1_{file_idx}.npy"),
        }
    }

    /// Seismic-file name for the 0-based file index.
    pub fn seismic_name(&self, file_idx: usize) -> String {
        match self.naming {
            NamingScheme::VelStyle => format!("data{}.npy", file_idx + 1),
            NamingScheme::Fault { n_layers } => format!("seis_{n_layers}_1_{file_idx}.npy"),
        }
    }
}

/// One packed file as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub samples: usize,
    pub sha256: String,
}

/// Dataset descriptor written after all array files. Deliberately free of
/// timestamps and absolute paths so identical runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Version of the toolkit that wrote the directory.
    pub tool_version: String,
    pub family: String,
    pub seed: u64,
    pub config: GeneratorConfig,
    pub config_sha256: String,
    pub geometry: AcquisitionGeometry,
    pub n_samples: usize,
    pub samples_per_file: usize,
    /// True when the final file holds fewer than `samples_per_file` samples.
    pub short_last_file: bool,
    pub velocity_files: Vec<FileEntry>,
    pub seismic_files: Vec<FileEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Manifest> {
        let path = root.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest {
            reason: format!("{}: {e}", path.display()),
        })
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Manifest {
            reason: e.to_string(),
        })?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Recomputes every file checksum under `root`. A single flipped byte
    /// in any listed file fails with the offending path.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for entry in self.velocity_files.iter().chain(&self.seismic_files) {
            let path = root.join(&entry.name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let actual = sha256_hex(&bytes);
            if actual != entry.sha256 {
                return Err(Error::ChecksumMismatch {
                    path,
                    expected: entry.sha256.clone(),
                    actual,
                });
            }
        }
        Ok(())
    }
}

/// Writes `maps` and `gathers` under `layout`, batch-major, and returns the
/// manifest it wrote last.
pub fn pack_dataset(
    maps: &[VelocityMap],
    gathers: &[SeismicGather],
    layout: &DatasetLayout,
    config: &GeneratorConfig,
    geometry: &AcquisitionGeometry,
) -> Result<Manifest> {
    if maps.is_empty() {
        return Err(Error::config("cannot pack an empty sample list"));
    }
    if maps.len() != gathers.len() {
        return Err(Error::ShapeMismatch {
            context: "pack_dataset sample counts",
            expected: format!("{} gathers", maps.len()),
            actual: format!("{}", gathers.len()),
        });
    }
    if layout.samples_per_file == 0 {
        return Err(Error::config("samples_per_file must be at least 1"));
    }
    let (nz, nx) = (maps[0].nz(), maps[0].nx());
    let (ns, nt, nr) = (
        gathers[0].n_shots(),
        gathers[0].nt(),
        gathers[0].n_receivers(),
    );
    for m in maps {
        if m.nz() != nz || m.nx() != nx {
            return Err(Error::ShapeMismatch {
                context: "pack_dataset velocity maps",
                expected: format!("{nz}x{nx}"),
                actual: format!("{}x{}", m.nz(), m.nx()),
            });
        }
    }
    for g in gathers {
        if g.n_shots() != ns || g.nt() != nt || g.n_receivers() != nr {
            return Err(Error::ShapeMismatch {
                context: "pack_dataset gathers",
                expected: format!("{ns}x{nt}x{nr}"),
                actual: format!("{}x{}x{}", g.n_shots(), g.nt(), g.n_receivers()),
            });
        }
    }

    fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;

    let mut velocity_files = Vec::new();
    let mut seismic_files = Vec::new();
    for (file_idx, chunk) in maps
        .chunks(layout.samples_per_file)
        .zip(gathers.chunks(layout.samples_per_file))
        .enumerate()
        .map(|(i, (m, g))| (i, (m, g)))
    {
        let (map_chunk, gather_chunk) = chunk;
        let batch = map_chunk.len();

        let mut vel = Array4::zeros((batch, 1, nz, nx));
        for (b, m) in map_chunk.iter().enumerate() {
            vel.index_axis_mut(Axis(0), b)
                .index_axis_mut(Axis(0), 0)
                .assign(&m.values);
        }
        let name = layout.velocity_name(file_idx);
        let bytes = to_npy_bytes(vel.view().into_dyn())?;
        let path = layout.root.join(&name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        velocity_files.push(FileEntry {
            name,
            samples: batch,
            sha256: sha256_hex(&bytes),
        });

        let mut seis = Array4::zeros((batch, ns, nt, nr));
        for (b, g) in gather_chunk.iter().enumerate() {
            seis.index_axis_mut(Axis(0), b).assign(&g.traces);
        }
        let name = layout.seismic_name(file_idx);
        let bytes = to_npy_bytes(seis.view().into_dyn())?;
        let path = layout.root.join(&name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        seismic_files.push(FileEntry {
            name,
            samples: batch,
            sha256: sha256_hex(&bytes),
        });
    }

    let config_json = serde_json::to_string(config).map_err(|e| Error::Manifest {
        reason: e.to_string(),
    })?;
    let manifest = Manifest {
        format_version: 1,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        family: config.family.name().to_string(),
        seed: config.seed,
        config: config.clone(),
        config_sha256: sha256_hex(config_json.as_bytes()),
        geometry: geometry.clone(),
        n_samples: maps.len(),
        samples_per_file: layout.samples_per_file,
        short_last_file: maps.len() % layout.samples_per_file != 0,
        velocity_files,
        seismic_files,
    };
    manifest.save(&layout.root)?;
    Ok(manifest)
}

/// Lazily loaded sample stream; see [`load_pairs`].
#[derive(Debug)]
pub struct Pairs {
    root: PathBuf,
    files: Vec<(String, String)>,
    dx: f64,
    dt: f64,
    file_idx: usize,
    buffer: std::vec::IntoIter<(VelocityMap, SeismicGather)>,
}

fn split_batch(
    vel: ArrayD<f64>,
    seis: ArrayD<f64>,
    dx: f64,
    dt: f64,
    vel_name: &str,
    root: &Path,
) -> Result<Vec<(VelocityMap, SeismicGather)>> {
    let bad_shape = |context: &'static str, shape: &[usize]| Error::ShapeMismatch {
        context,
        expected: "4 axes, velocity channel axis of 1".into(),
        actual: format!("{shape:?} near {}", root.join(vel_name).display()),
    };
    if vel.ndim() != 4 || vel.shape()[1] != 1 {
        return Err(bad_shape("velocity batch", vel.shape()));
    }
    if seis.ndim() != 4 {
        return Err(bad_shape("seismic batch", seis.shape()));
    }
    if vel.shape()[0] != seis.shape()[0] {
        return Err(Error::ShapeMismatch {
            context: "paired batch sizes",
            expected: format!("{}", vel.shape()[0]),
            actual: format!("{} under {}", seis.shape()[0], root.display()),
        });
    }
    let vel4 = vel.into_dimensionality::<ndarray::Ix4>().expect("checked");
    let seis4 = seis.into_dimensionality::<ndarray::Ix4>().expect("checked");
    let mut out = Vec::with_capacity(vel4.shape()[0]);
    for b in 0..vel4.shape()[0] {
        let values = vel4.index_axis(Axis(0), b).index_axis(Axis(0), 0).to_owned();
        let map = VelocityMap::new(values, dx)?;
        let traces: Array3<f64> = seis4.index_axis(Axis(0), b).to_owned();
        out.push((map, SeismicGather { traces, dt }));
    }
    Ok(out)
}

impl Iterator for Pairs {
    type Item = Result<(VelocityMap, SeismicGather)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(pair) = self.buffer.next() {
                return Some(Ok(pair));
            }
            if self.file_idx >= self.files.len() {
                return None;
            }
            let (vel_name, seis_name) = self.files[self.file_idx].clone();
            self.file_idx += 1;
            let loaded = read_npy(&self.root.join(&vel_name)).and_then(|vel| {
                read_npy(&self.root.join(&seis_name)).and_then(|seis| {
                    split_batch(vel, seis, self.dx, self.dt, &vel_name, &self.root)
                })
            });
            match loaded {
                Ok(batch) => self.buffer = batch.into_iter(),
                Err(e) => {
                    self.file_idx = self.files.len();
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Streams `(map, gather)` pairs from a dataset directory in file order
/// then batch order. Grid spacing and time step come from the manifest when
/// one is present, else the 10 m / 1 ms defaults. Each call scans afresh,
/// so two passes yield identical sequences.
pub fn load_pairs(root: &Path, layout: &DatasetLayout) -> Result<Pairs> {
    let (dx, dt) = match Manifest::load(root) {
        Ok(m) => (m.config.dx, m.geometry.dt),
        Err(_) => (10.0, 1e-3),
    };
    let mut files = Vec::new();
    let mut idx = 0; // 0-based file index; VelStyle names add 1 internally

    loop {
        let vel_name = layout.velocity_name(idx);
        let seis_name = layout.seismic_name(idx);
        let vel_here = root.join(&vel_name).is_file();
        let seis_here = root.join(&seis_name).is_file();
        match (vel_here, seis_here) {
            (true, true) => files.push((vel_name, seis_name)),
            (false, false) => break,
            (true, false) => {
                return Err(Error::Pairing {
                    present: vel_name,
                    missing: seis_name,
                })
            }
            (false, true) => {
                return Err(Error::Pairing {
                    present: seis_name,
                    missing: vel_name,
                })
            }
        }
        idx += 1;
    }
    if files.is_empty() {
        return Err(Error::config(format!(
            "no dataset files under {}",
            root.display()
        )));
    }
    Ok(Pairs {
        root: root.to_path_buf(),
        files,
        dx,
        dt,
        file_idx: 0,
        buffer: Vec::new().into_iter(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{Family, GeneratorConfig, Version};
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny_samples(n: usize) -> (Vec<VelocityMap>, Vec<SeismicGather>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let maps = (0..n)
            .map(|_| {
                let v = Array2::from_shape_fn((6, 5), |_| rng.random_range(1500.0..4500.0));
                VelocityMap::new(v, 10.0).unwrap()
            })
            .collect();
        let gathers = (0..n)
            .map(|_| SeismicGather {
                traces: Array3::from_shape_fn((2, 8, 5), |_| rng.random_range(-1.0..1.0)),
                dt: 1e-3,
            })
            .collect();
        (maps, gathers)
    }

    fn tiny_layout(root: &Path, spf: usize) -> DatasetLayout {
        DatasetLayout {
            root: root.to_path_buf(),
            samples_per_file: spf,
            naming: NamingScheme::VelStyle,
        }
    }

    fn tiny_config() -> GeneratorConfig {
        let mut cfg = GeneratorConfig::for_family(Family::FlatVel, Version::A, 1);
        cfg.nz = 6;
        cfg.nx = 5;
        cfg.amp_range = (0.0, 40.0);
        cfg
    }

    #[test]
    fn vel_naming_counts_from_one_and_flags_short_file() {
        let dir = tempfile::tempdir().unwrap();
        let (maps, gathers) = tiny_samples(7);
        let layout = tiny_layout(dir.path(), 3);
        let geom = AcquisitionGeometry::openfwi();
        let m = pack_dataset(&maps, &gathers, &layout, &tiny_config(), &geom).unwrap();
        assert!(m.short_last_file);
        assert_eq!(
            m.velocity_files.iter().map(|f| f.name.as_str()).collect::<Vec<_>>(),
            ["model1.npy", "model2.npy", "model3.npy"]
        );
        assert_eq!(
            m.seismic_files.iter().map(|f| f.name.as_str()).collect::<Vec<_>>(),
            ["data1.npy", "data2.npy", "data3.npy"]
        );
        assert_eq!(
            m.velocity_files.iter().map(|f| f.samples).collect::<Vec<_>>(),
            [3, 3, 1]
        );
        assert!(dir.path().join(MANIFEST_NAME).is_file());
        let re = regex_lite_check(&m);
        assert!(re, "names must match the family conventions");
    }

    // The spec'd naming regexes, checked without a regex dependency.
    fn regex_lite_check(m: &Manifest) -> bool {
        m.velocity_files.iter().all(|f| {
            f.name.starts_with("model")
                && f.name.ends_with(".npy")
                && f.name[5..f.name.len() - 4].chars().all(|c| c.is_ascii_digit())
        }) && m.seismic_files.iter().all(|f| {
            f.name.starts_with("data")
                && f.name.ends_with(".npy")
                && f.name[4..f.name.len() - 4].chars().all(|c| c.is_ascii_digit())
        })
    }

    #[test]
    fn fault_naming_embeds_layer_count_and_counts_from_zero() {
        let layout = DatasetLayout {
            root: PathBuf::from("unused"),
            samples_per_file: 500,
            naming: NamingScheme::Fault { n_layers: 3 },
        };
        assert_eq!(layout.velocity_name(0), "vel_3_1_0.npy");
        assert_eq!(layout.seismic_name(0), "seis_3_1_0.npy");
        assert_eq!(layout.velocity_name(2), "vel_3_1_2.npy");
    }

    #[test]
    fn pack_then_load_is_identity_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let (maps, gathers) = tiny_samples(5);
        let layout = tiny_layout(dir.path(), 2);
        let geom = AcquisitionGeometry::openfwi();
        pack_dataset(&maps, &gathers, &layout, &tiny_config(), &geom).unwrap();

        let pass = |_: ()| -> Vec<(VelocityMap, SeismicGather)> {
            load_pairs(dir.path(), &layout)
                .unwrap()
                .collect::<Result<Vec<_>>>()
                .unwrap()
        };
        let first = pass(());
        assert_eq!(first.len(), 5);
        for (i, (m1, g1)) in first.iter().enumerate() {
            for (a, b) in maps[i].values.iter().zip(m1.values.iter()) {
                assert_eq!(*a as f32 as f64, *b);
            }
            for (a, b) in gathers[i].traces.iter().zip(g1.traces.iter()) {
                assert_eq!(*a as f32 as f64, *b);
            }
            assert_eq!(m1.dx, 10.0); // from the manifest's config
            assert_eq!(g1.dt, 1e-3);
        }

        // Restartable: a second pass yields the identical sequence.
        let second = pass(());
        for ((m1, g1), (m2, g2)) in first.iter().zip(second.iter()) {
            assert_eq!(m1.values, m2.values);
            assert_eq!(g1.traces, g2.traces);
        }
    }

    #[test]
    fn missing_partner_file_is_a_pairing_error_naming_it() {
        let dir = tempfile::tempdir().unwrap();
        let (maps, gathers) = tiny_samples(4);
        let layout = tiny_layout(dir.path(), 2);
        let geom = AcquisitionGeometry::openfwi();
        pack_dataset(&maps, &gathers, &layout, &tiny_config(), &geom).unwrap();
        fs::remove_file(dir.path().join("model2.npy")).unwrap();
        match load_pairs(dir.path(), &layout) {
            Err(Error::Pairing { present, missing }) => {
                assert_eq!(present, "data2.npy");
                assert_eq!(missing, "model2.npy");
            }
            other => panic!("expected pairing error, got {other:?}"),
        }
    }

    #[test]
    fn empty_sample_list_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let layout = tiny_layout(dir.path(), 2);
        let geom = AcquisitionGeometry::openfwi();
        assert!(pack_dataset(&[], &[], &layout, &tiny_config(), &geom).is_err());
    }

    #[test]
    fn checksum_catches_a_flipped_byte() {
        let dir = tempfile::tempdir().unwrap();
        let (maps, gathers) = tiny_samples(2);
        let layout = tiny_layout(dir.path(), 2);
        let geom = AcquisitionGeometry::openfwi();
        let manifest = pack_dataset(&maps, &gathers, &layout, &tiny_config(), &geom).unwrap();
        manifest.verify(dir.path()).unwrap();

        let target = dir.path().join("data1.npy");
        let mut bytes = fs::read(&target).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        fs::write(&target, &bytes).unwrap();
        match manifest.verify(dir.path()) {
            Err(Error::ChecksumMismatch { path, .. }) => {
                assert!(path.ends_with("data1.npy"));
            }
            other => panic!("expected checksum mismatch, got {other:?}"),
        }
    }

    #[test]
    fn two_packs_of_the_same_samples_are_byte_identical() {
        let (maps, gathers) = tiny_samples(3);
        let geom = AcquisitionGeometry::openfwi();
        let cfg = tiny_config();
        let dirs: Vec<_> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let layout = tiny_layout(dir.path(), 2);
                pack_dataset(&maps, &gathers, &layout, &cfg, &geom).unwrap();
                dir
            })
            .collect();
        let mut names: Vec<String> = fs::read_dir(dirs[0].path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names.len(), 5); // 2 data + 2 model + manifest
        for name in names {
            let a = fs::read(dirs[0].path().join(&name)).unwrap();
            let b = fs::read(dirs[1].path().join(&name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let (maps, gathers) = tiny_samples(2);
        let layout = tiny_layout(dir.path(), 2);
        let geom = AcquisitionGeometry::openfwi();
        let written = pack_dataset(&maps, &gathers, &layout, &tiny_config(), &geom).unwrap();
        let loaded = Manifest::load(dir.path()).unwrap();
        assert_eq!(written, loaded);
    }
}
