//! On-disk dataset format.
//!
//! One directory per dataset: a human-readable `manifest.txt` plus three
//! flat little-endian `f32` blobs. The manifest documents the byte order
//! and dimension order of each blob so the files are readable from any
//! language.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::{Action, EnvKind, Observation, Vec2};

use super::{ActionBox, Dataset, Episode, PolicySpec};

const FORMAT_VERSION: u32 = 1;
const OBS_BLOB: &str = "observations.f32";
const ACT_BLOB: &str = "actions.f32";
const CLOUD_BLOB: &str = "clouds.f32";

pub fn save<T: Scalar>(dataset: &Dataset<T>, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let frames = dataset
        .episodes
        .first()
        .map(|e| e.frames())
        .ok_or(Error::EmptyInput("dataset episodes"))?;
    if dataset.episodes.iter().any(|e| e.frames() != frames) {
        return Err(Error::ContractViolation(
            "episodes have inconsistent frame counts".into(),
        ));
    }
    let particles = dataset.episodes[0].clouds[0].len();

    fs::create_dir_all(dir)?;

    let mut manifest = String::new();
    manifest.push_str(&format!("format_version: {FORMAT_VERSION}\n"));
    manifest.push_str(&format!("env: {}\n", dataset.kind));
    manifest.push_str(&format!("grid: {}\n", dataset.grid));
    manifest.push_str(&format!("episodes: {}\n", dataset.episodes.len()));
    manifest.push_str(&format!("frames: {frames}\n"));
    manifest.push_str(&format!("particles: {particles}\n"));
    manifest.push_str(&format!("seed: {}\n", dataset.seed));
    manifest.push_str(&format!("policy: {}\n", dataset.policy.name()));
    if let PolicySpec::Gapped { gap } = dataset.policy {
        manifest.push_str(&format!("gap_lo: {}\n", join_f64(&gap.lo)));
        manifest.push_str(&format!("gap_hi: {}\n", join_f64(&gap.hi)));
    }
    let ep_seeds: Vec<String> = dataset.episodes.iter().map(|e| e.seed.to_string()).collect();
    manifest.push_str(&format!("episode_seeds: {}\n", ep_seeds.join(" ")));
    manifest.push_str("byte_order: little-endian f32\n");
    manifest.push_str(&format!(
        "layout_observations: [episode][frame<=frames][row][col] in {OBS_BLOB}\n"
    ));
    manifest.push_str(&format!(
        "layout_actions: [episode][frame][sx sy ex ey] in {ACT_BLOB}\n"
    ));
    manifest.push_str(&format!(
        "layout_clouds: [episode][frame<=frames][particle][x y] in {CLOUD_BLOB}\n"
    ));
    fs::write(dir.join("manifest.txt"), manifest)?;

    let mut obs = Vec::new();
    let mut act = Vec::new();
    let mut clouds = Vec::new();
    for ep in &dataset.episodes {
        for o in &ep.observations {
            for v in &o.pixels {
                obs.extend_from_slice(&(v.f64() as f32).to_le_bytes());
            }
        }
        for a in &ep.actions {
            for v in a.as_array() {
                act.extend_from_slice(&(v.f64() as f32).to_le_bytes());
            }
        }
        for cloud in &ep.clouds {
            for p in cloud {
                clouds.extend_from_slice(&(p.x.f64() as f32).to_le_bytes());
                clouds.extend_from_slice(&(p.y.f64() as f32).to_le_bytes());
            }
        }
    }
    fs::write(dir.join(OBS_BLOB), obs)?;
    fs::write(dir.join(ACT_BLOB), act)?;
    fs::write(dir.join(CLOUD_BLOB), clouds)?;
    Ok(())
}

pub fn load<T: Scalar>(dir: &Path) -> Result<Dataset<T>> {
    let manifest = fs::read_to_string(dir.join("manifest.txt"))
        .map_err(|e| Error::Load(format!("{}: {e}", dir.join("manifest.txt").display())))?;

    let mut version = None;
    let mut env = None;
    let mut grid = None;
    let mut episodes = None;
    let mut frames = None;
    let mut particles = None;
    let mut seed = None;
    let mut policy_name = None;
    let mut gap_lo = None;
    let mut gap_hi = None;
    let mut episode_seeds: Vec<u64> = Vec::new();

    for line in manifest.lines() {
        let Some((key, value)) = line.split_once(':') else {
            return Err(Error::Load(format!("malformed manifest line {line:?}")));
        };
        let value = value.trim();
        match key {
            "format_version" => version = Some(parse::<u32>(value, "format_version")?),
            "env" => env = Some(EnvKind::parse(value).map_err(|e| Error::Load(e.to_string()))?),
            "grid" => grid = Some(parse::<usize>(value, "grid")?),
            "episodes" => episodes = Some(parse::<usize>(value, "episodes")?),
            "frames" => frames = Some(parse::<usize>(value, "frames")?),
            "particles" => particles = Some(parse::<usize>(value, "particles")?),
            "seed" => seed = Some(parse::<u64>(value, "seed")?),
            "policy" => policy_name = Some(value.to_string()),
            "gap_lo" => gap_lo = Some(parse_f64s(value)?),
            "gap_hi" => gap_hi = Some(parse_f64s(value)?),
            "episode_seeds" => {
                episode_seeds = value
                    .split_whitespace()
                    .map(|s| parse::<u64>(s, "episode seed"))
                    .collect::<Result<_>>()?;
            }
            "byte_order" | "layout_observations" | "layout_actions" | "layout_clouds" => {}
            other => return Err(Error::Load(format!("unknown manifest key {other:?}"))),
        }
    }

    let version = version.ok_or_else(|| Error::Load("manifest missing format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Load(format!(
            "unsupported dataset format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let kind = env.ok_or_else(|| Error::Load("manifest missing env".into()))?;
    let grid = grid.ok_or_else(|| Error::Load("manifest missing grid".into()))?;
    let n_eps = episodes.ok_or_else(|| Error::Load("manifest missing episodes".into()))?;
    let frames = frames.ok_or_else(|| Error::Load("manifest missing frames".into()))?;
    let particles = particles.ok_or_else(|| Error::Load("manifest missing particles".into()))?;
    let seed = seed.ok_or_else(|| Error::Load("manifest missing seed".into()))?;
    let policy = match policy_name.as_deref() {
        Some("uniform") => PolicySpec::Uniform,
        Some("gapped") => {
            let lo = gap_lo.ok_or_else(|| Error::Load("gapped policy missing gap_lo".into()))?;
            let hi = gap_hi.ok_or_else(|| Error::Load("gapped policy missing gap_hi".into()))?;
            PolicySpec::Gapped {
                gap: ActionBox { lo, hi },
            }
        }
        other => return Err(Error::Load(format!("unknown policy {other:?}"))),
    };
    if episode_seeds.len() != n_eps {
        return Err(Error::Load(format!(
            "manifest lists {} episode seeds for {} episodes",
            episode_seeds.len(),
            n_eps
        )));
    }

    let obs = read_blob(&dir.join(OBS_BLOB), n_eps * (frames + 1) * grid * grid)?;
    let act = read_blob(&dir.join(ACT_BLOB), n_eps * frames * 4)?;
    let clouds = read_blob(&dir.join(CLOUD_BLOB), n_eps * (frames + 1) * particles * 2)?;

    let mut eps = Vec::with_capacity(n_eps);
    let obs_stride = (frames + 1) * grid * grid;
    let act_stride = frames * 4;
    let cloud_stride = (frames + 1) * particles * 2;
    for e in 0..n_eps {
        let mut observations = Vec::with_capacity(frames + 1);
        for f in 0..=frames {
            let base = e * obs_stride + f * grid * grid;
            let pixels = obs[base..base + grid * grid]
                .iter()
                .map(|&v| T::of(v as f64))
                .collect();
            observations.push(Observation { pixels, grid });
        }
        let mut actions = Vec::with_capacity(frames);
        for f in 0..frames {
            let base = e * act_stride + f * 4;
            actions.push(Action::from_array([
                T::of(act[base] as f64),
                T::of(act[base + 1] as f64),
                T::of(act[base + 2] as f64),
                T::of(act[base + 3] as f64),
            ]));
        }
        let mut ep_clouds = Vec::with_capacity(frames + 1);
        for f in 0..=frames {
            let base = e * cloud_stride + f * particles * 2;
            let cloud = (0..particles)
                .map(|p| {
                    Vec2::new(
                        T::of(clouds[base + 2 * p] as f64),
                        T::of(clouds[base + 2 * p + 1] as f64),
                    )
                })
                .collect();
            ep_clouds.push(cloud);
        }
        eps.push(Episode {
            seed: episode_seeds[e],
            observations,
            actions,
            clouds: ep_clouds,
        });
    }

    let ds = Dataset {
        kind,
        grid,
        policy,
        seed,
        episodes: eps,
    };
    ds.validate().map_err(|e| Error::Load(e.to_string()))?;
    Ok(ds)
}

fn read_blob(path: &Path, expected_values: usize) -> Result<Vec<f32>> {
    let mut raw = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?
        .read_to_end(&mut raw)?;
    let expected_bytes = expected_values * 4;
    if raw.len() != expected_bytes {
        return Err(Error::Load(format!(
            "{}: blob is {} bytes, expected {expected_bytes}",
            path.display(),
            raw.len()
        )));
    }
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn parse<V: std::str::FromStr>(s: &str, what: &str) -> Result<V> {
    s.parse()
        .map_err(|_| Error::Load(format!("cannot parse {what} from {s:?}")))
}

fn parse_f64s(s: &str) -> Result<[f64; 4]> {
    let vals: Vec<f64> = s
        .split_whitespace()
        .map(|v| parse::<f64>(v, "gap bound"))
        .collect::<Result<_>>()?;
    vals.try_into()
        .map_err(|_| Error::Load("gap bounds need exactly 4 values".into()))
}

fn join_f64(v: &[f64; 4]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;
    use crate::sim::EnvKind;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pushplan-data-tests").join(name);
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds: Dataset<f32> = generate(
            EnvKind::Rope,
            PolicySpec::gapped_default(),
            4,
            6,
            32,
            9,
        )
        .unwrap();
        let dir = tmp("roundtrip");
        save(&ds, &dir).unwrap();
        let loaded: Dataset<f32> = load(&dir).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn corrupted_blob_length_is_reported_with_byte_counts() {
        let ds: Dataset<f32> =
            generate(EnvKind::Granular, PolicySpec::Uniform, 2, 3, 16, 0).unwrap();
        let dir = tmp("corrupt");
        save(&ds, &dir).unwrap();
        let path = dir.join(ACT_BLOB);
        let mut raw = fs::read(&path).unwrap();
        raw.truncate(raw.len() - 4);
        fs::write(&path, raw).unwrap();
        let err = load::<f32>(&dir).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("92 bytes") && msg.contains("expected 96"), "{msg}");
    }

    #[test]
    fn unknown_format_version_is_rejected() {
        let ds: Dataset<f32> =
            generate(EnvKind::Granular, PolicySpec::Uniform, 2, 3, 16, 0).unwrap();
        let dir = tmp("version");
        save(&ds, &dir).unwrap();
        let path = dir.join("manifest.txt");
        let manifest = fs::read_to_string(&path)
            .unwrap()
            .replace("format_version: 1", "format_version: 99");
        fs::write(&path, manifest).unwrap();
        let err = load::<f32>(&dir).unwrap_err();
        assert!(err.to_string().contains("format version 99"), "{err}");
    }
}
