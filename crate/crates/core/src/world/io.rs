//! Textual world file: a JSON document `{header, clusters, crc32}` where the
//! CRC-32 covers the compact serialisation of `{header, clusters}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cluster, Dims, GenConfig, World};
use crate::error::{Error, Result};

pub const WORLD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    #[serde(rename = "L")]
    classes: usize,
    #[serde(rename = "S")]
    subtiles: usize,
    #[serde(rename = "F")]
    features: usize,
    #[serde(rename = "G")]
    grid: usize,
    #[serde(rename = "N")]
    clusters: usize,
    seed: u64,
    w_star: Vec<f64>,
    gen_config: GenConfig,
}

#[derive(Serialize)]
struct BodyRef<'a> {
    header: &'a Header,
    clusters: &'a [Cluster],
}

#[derive(Serialize)]
struct FileRef<'a> {
    header: &'a Header,
    clusters: &'a [Cluster],
    crc32: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOwned {
    header: serde_json::Value,
    clusters: Vec<Cluster>,
    crc32: String,
}

fn canonical_crc(header: &Header, clusters: &[Cluster]) -> Result<u32> {
    let body = serde_json::to_vec(&BodyRef { header, clusters })
        .map_err(|e| Error::Schema(format!("serialise: {e}")))?;
    Ok(crc32fast::hash(&body))
}

pub fn world_to_string(world: &World) -> Result<String> {
    let d = world.dims;
    let header = Header {
        schema_version: WORLD_SCHEMA_VERSION,
        classes: d.classes,
        subtiles: d.subtiles,
        features: d.features,
        grid: d.grid,
        clusters: world.clusters.len(),
        seed: world.seed,
        w_star: world.w_star.clone(),
        gen_config: world.config.clone(),
    };
    let crc = canonical_crc(&header, &world.clusters)?;
    let mut text = serde_json::to_string(&FileRef {
        header: &header,
        clusters: &world.clusters,
        crc32: format!("{crc:08x}"),
    })
    .map_err(|e| Error::Schema(format!("serialise: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn world_from_str(text: &str) -> Result<World> {
    let file: FileOwned =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("world file: {e}")))?;
    let version = file
        .header
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Schema("header lacks schema_version".into()))?;
    if version != u64::from(WORLD_SCHEMA_VERSION) {
        return Err(Error::Schema(format!(
            "world schema version {version}, this build reads {WORLD_SCHEMA_VERSION}"
        )));
    }
    let header: Header = serde_json::from_value(file.header)
        .map_err(|e| Error::Schema(format!("world header: {e}")))?;
    let stored = u32::from_str_radix(&file.crc32, 16)
        .map_err(|_| Error::Schema(format!("bad crc32 field {:?}", file.crc32)))?;
    let computed = canonical_crc(&header, &file.clusters)?;
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    if header.clusters != file.clusters.len() {
        return Err(Error::Validation(format!(
            "header says N={}, file has {} clusters",
            header.clusters,
            file.clusters.len()
        )));
    }
    let world = World {
        dims: Dims {
            classes: header.classes,
            subtiles: header.subtiles,
            features: header.features,
            grid: header.grid,
        },
        config: header.gen_config,
        seed: header.seed,
        w_star: header.w_star,
        clusters: file.clusters,
    };
    world.validate()?;
    Ok(world)
}

pub fn save_world(world: &World, path: &Path) -> Result<()> {
    let text = world_to_string(world)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_world(path: &Path) -> Result<World> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    world_from_str(&text)
}
