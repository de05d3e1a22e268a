//! Wavefront OBJ (`v`, `vt`, `f v/vt`) and the skeleton/weights sidecar JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnchorMesh, Skeleton};
use crate::error::{Result, UvaError};
use crate::math::Vec3;

/// Geometry read from an OBJ file. `uvs` is per vertex when present.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjMesh {
    pub vertices: Vec<Vec3>,
    pub uvs: Option<Vec<[f64; 2]>>,
    pub faces: Vec<[u32; 3]>,
}

pub fn write_obj(path: &Path, vertices: &[Vec3], uvs: &[[f64; 2]], faces: &[[u32; 3]]) -> Result<()> {
    let mut s = String::with_capacity(64 * (vertices.len() + faces.len()));
    // `{}` on f64 prints the shortest representation that parses back exactly
    for v in vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for uv in uvs {
        let _ = writeln!(s, "vt {} {}", uv[0], uv[1]);
    }
    let with_uv = uvs.len() == vertices.len();
    for f in faces {
        let [a, b, c] = f.map(|i| i + 1);
        if with_uv {
            let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
        } else {
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    fs::write(path, s).map_err(|e| UvaError::io(path, e))
}

pub fn read_obj(path: &Path) -> Result<ObjMesh> {
    let text = fs::read_to_string(path).map_err(|e| UvaError::io(path, e))?;
    parse_obj(&text).map_err(|m| UvaError::Load(format!("{}: {m}", path.display())))
}

fn parse_obj(text: &str) -> std::result::Result<ObjMesh, String> {
    let mut vertices = Vec::new();
    let mut texcoords = Vec::new();
    let mut faces = Vec::new();
    let mut vt_of_v: Vec<Option<usize>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let num = |s: Option<&str>| -> std::result::Result<f64, String> {
            s.ok_or_else(|| format!("line {}: missing value", ln + 1))?
                .parse::<f64>()
                .map_err(|e| format!("line {}: {e}", ln + 1))
        };
        match it.next() {
            Some("v") => {
                vertices.push(Vec3::new(num(it.next())?, num(it.next())?, num(it.next())?));
            }
            Some("vt") => texcoords.push([num(it.next())?, num(it.next())?]),
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let v = resolve(parts.next(), vertices.len(), ln)?
                        .ok_or_else(|| format!("line {}: face without vertex index", ln + 1))?;
                    let t = resolve(parts.next(), texcoords.len(), ln)?;
                    if vt_of_v.len() < vertices.len() {
                        vt_of_v.resize(vertices.len(), None);
                    }
                    if let Some(t) = t {
                        vt_of_v[v] = Some(t);
                    }
                    idx.push(v as u32);
                }
                if idx.len() < 3 {
                    return Err(format!("line {}: face with fewer than 3 vertices", ln + 1));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    vt_of_v.resize(vertices.len(), None);
    let uvs = if !texcoords.is_empty() && vt_of_v.iter().all(Option::is_some) {
        Some(vt_of_v.iter().map(|t| texcoords[t.unwrap()]).collect())
    } else {
        None
    };
    Ok(ObjMesh {
        vertices,
        uvs,
        faces,
    })
}

fn resolve(tok: Option<&str>, count: usize, ln: usize) -> std::result::Result<Option<usize>, String> {
    let Some(tok) = tok.filter(|t| !t.is_empty()) else {
        return Ok(None);
    };
    let i: i64 = tok.parse().map_err(|e| format!("line {}: {e}", ln + 1))?;
    let idx = if i < 0 { count as i64 + i } else { i - 1 };
    if idx < 0 || idx as usize >= count {
        return Err(format!("line {}: index {i} out of range", ln + 1));
    }
    Ok(Some(idx as usize))
}

/// Sidecar JSON carrying the skeleton and the `V x N` skinning weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    pub bone_names: Vec<String>,
    /// Parent bone index, `-1` for the root.
    pub parents: Vec<i64>,
    pub joints: Vec<[f64; 3]>,
    /// One row of `N` weights per mesh vertex.
    pub lbs_weights: Vec<Vec<f64>>,
}

impl SkeletonFile {
    pub fn from_parts(skeleton: &Skeleton, mesh: &AnchorMesh) -> Self {
        Self {
            bone_names: skeleton.names.clone(),
            parents: skeleton
                .parents
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            joints: skeleton.joints.iter().map(|j| [j.x, j.y, j.z]).collect(),
            lbs_weights: (0..mesh.vertex_count()).map(|v| mesh.weights(v).to_vec()).collect(),
        }
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        let parents = self
            .parents
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect();
        Skeleton::new(
            self.bone_names.clone(),
            parents,
            self.joints.iter().map(|j| Vec3::from(*j)).collect(),
        )
    }

    /// Combines the sidecar with OBJ geometry into an anchor mesh.
    pub fn anchor_mesh(&self, obj: &ObjMesh) -> Result<AnchorMesh> {
        let n = self.bone_names.len();
        if self.lbs_weights.len() != obj.vertices.len() {
            return Err(UvaError::Topology(format!(
                "{} weight rows for {} OBJ vertices",
                self.lbs_weights.len(),
                obj.vertices.len()
            )));
        }
        if self.lbs_weights.iter().any(|r| r.len() != n) {
            return Err(UvaError::Load("weight row length differs from bone count".into()));
        }
        let uvs = obj
            .uvs
            .clone()
            .ok_or_else(|| UvaError::Load("OBJ lacks per-vertex texture coordinates".into()))?;
        let mesh = AnchorMesh {
            vertices: obj.vertices.clone(),
            faces: obj.faces.clone(),
            uvs,
            lbs_weights: self.lbs_weights.iter().flatten().copied().collect(),
            bone_count: n,
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

pub fn write_skeleton_file(path: &Path, skeleton: &Skeleton, mesh: &AnchorMesh) -> Result<()> {
    let json = serde_json::to_string_pretty(&SkeletonFile::from_parts(skeleton, mesh))
        .map_err(|e| UvaError::json(path, e))?;
    fs::write(path, json).map_err(|e| UvaError::io(path, e))
}

pub fn read_skeleton_file(path: &Path) -> Result<SkeletonFile> {
    let text = fs::read_to_string(path).map_err(|e| UvaError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| UvaError::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{build_default_body, BodySpec};

    #[test]
    fn obj_and_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (sk, mesh) = build_default_body(&BodySpec::default()).unwrap();
        let obj_path = dir.path().join("body.obj");
        let sk_path = dir.path().join("skeleton.json");
        write_obj(&obj_path, &mesh.vertices, &mesh.uvs, &mesh.faces).unwrap();
        write_skeleton_file(&sk_path, &sk, &mesh).unwrap();

        let obj = read_obj(&obj_path).unwrap();
        let side = read_skeleton_file(&sk_path).unwrap();
        assert_eq!(side.skeleton().unwrap(), sk);
        assert_eq!(side.anchor_mesh(&obj).unwrap(), mesh);
    }

    #[test]
    fn obj_parser_handles_quads_and_negative_indices() {
        let obj = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n").unwrap();
        assert_eq!(obj.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(obj.uvs.is_none());
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }
}
