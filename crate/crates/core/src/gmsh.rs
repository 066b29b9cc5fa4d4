//! ASCII Gmsh MSH 2.2 reader and writer for triangle surface meshes.
//!
//! Only 3-node triangles (element type 2) carry geometry. Point and line
//! elements (types 15 and 1), which Gmsh emits for physical groups on lower
//! dimensional entities, are skipped; every other element type is an error.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::mesh::Mesh;
use crate::{Error, Result, Vec3};

const TRIANGLE: usize = 2;
const LINE: usize = 1;
const POINT: usize = 15;

pub fn read_gmsh(path: impl AsRef<Path>) -> Result<Mesh> {
    parse_gmsh(&fs::read_to_string(path)?)
}

pub fn write_gmsh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_gmsh(mesh))?;
    Ok(())
}

pub fn format_gmsh(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
    let _ = writeln!(out, "{}", mesh.n_vertices());
    for (i, p) in mesh.vertices().iter().enumerate() {
        // `{}` prints the shortest representation that reads back exactly
        let _ = writeln!(out, "{} {} {} {}", i + 1, p.x, p.y, p.z);
    }
    out.push_str("$EndNodes\n$Elements\n");
    let _ = writeln!(out, "{}", mesh.n_triangles());
    for (i, t) in mesh.triangles().iter().enumerate() {
        let _ = writeln!(out, "{} 2 2 1 1 {} {} {}", i + 1, t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out.push_str("$EndElements\n");
    out
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedGmsh(msg.into())
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| malformed(format!("missing {what}")))?
        .parse()
        .map_err(|_| malformed(format!("bad {what}")))
}

pub fn parse_gmsh(text: &str) -> Result<Mesh> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let mut vertices = Vec::new();
    let mut ids: HashMap<usize, usize> = HashMap::new();
    let mut triangles = Vec::new();
    let mut seen_format = false;
    let mut seen_nodes = false;
    let mut seen_elements = false;

    while let Some(line) = lines.next() {
        match line {
            "$MeshFormat" => {
                let header = lines.next().ok_or_else(|| malformed("empty $MeshFormat"))?;
                let mut tok = header.split_whitespace();
                let version: String = parse_num(tok.next(), "format version")?;
                if !version.starts_with("2.") {
                    return Err(malformed(format!("version {version} is not 2.x")));
                }
                let file_type: usize = parse_num(tok.next(), "file type")?;
                if file_type != 0 {
                    return Err(malformed("binary files are not supported"));
                }
                expect(&mut lines, "$EndMeshFormat")?;
                seen_format = true;
            }
            "$Nodes" => {
                let count: usize = parse_num(lines.next(), "node count")?;
                for _ in 0..count {
                    let l = lines.next().ok_or_else(|| malformed("truncated $Nodes"))?;
                    let mut tok = l.split_whitespace();
                    let id: usize = parse_num(tok.next(), "node id")?;
                    let x: f64 = parse_num(tok.next(), "x coordinate")?;
                    let y: f64 = parse_num(tok.next(), "y coordinate")?;
                    let z: f64 = parse_num(tok.next(), "z coordinate")?;
                    if ids.insert(id, vertices.len()).is_some() {
                        return Err(malformed(format!("duplicate node id {id}")));
                    }
                    vertices.push(Vec3::new(x, y, z));
                }
                expect(&mut lines, "$EndNodes")?;
                seen_nodes = true;
            }
            "$Elements" => {
                let count: usize = parse_num(lines.next(), "element count")?;
                for _ in 0..count {
                    let l = lines.next().ok_or_else(|| malformed("truncated $Elements"))?;
                    let tok: Vec<&str> = l.split_whitespace().collect();
                    let kind: usize = parse_num(tok.get(1).copied(), "element type")?;
                    let ntags: usize = parse_num(tok.get(2).copied(), "tag count")?;
                    match kind {
                        TRIANGLE => {
                            let nodes = &tok.get(3 + ntags..).unwrap_or(&[]);
                            if nodes.len() != 3 {
                                return Err(malformed(format!("triangle with {} nodes", nodes.len())));
                            }
                            let mut tri = [0usize; 3];
                            for (slot, t) in tri.iter_mut().zip(nodes.iter()) {
                                let id: usize = parse_num(Some(t), "node reference")?;
                                *slot = *ids
                                    .get(&id)
                                    .ok_or_else(|| malformed(format!("unknown node {id}")))?;
                            }
                            triangles.push(tri);
                        }
                        LINE | POINT => {}
                        other => return Err(Error::UnsupportedElement(other)),
                    }
                }
                expect(&mut lines, "$EndElements")?;
                seen_elements = true;
            }
            section if section.starts_with('$') && !section.starts_with("$End") => {
                // unknown section such as $PhysicalNames: skip to its end
                let end = format!("$End{}", &section[1..]);
                loop {
                    match lines.next() {
                        Some(l) if l == end => break,
                        Some(_) => {}
                        None => return Err(malformed(format!("unterminated {section}"))),
                    }
                }
            }
            other => return Err(malformed(format!("unexpected line {other:?}"))),
        }
    }
    if !(seen_format && seen_nodes && seen_elements) {
        return Err(malformed("missing $MeshFormat, $Nodes or $Elements"));
    }
    Mesh::new(vertices, triangles)
}

fn expect<'a>(lines: &mut impl Iterator<Item = &'a str>, tag: &str) -> Result<()> {
    match lines.next() {
        Some(l) if l == tag => Ok(()),
        Some(l) => Err(malformed(format!("expected {tag}, found {l:?}"))),
        None => Err(malformed(format!("expected {tag}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::DiagonalPattern;

    #[test]
    fn cube_round_trip_is_exact() {
        let cube = Mesh::cube_surface(2).unwrap().perturb_nodes(0.03, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.msh");
        write_gmsh(&cube, &path).unwrap();
        let back = read_gmsh(&path).unwrap();
        assert_eq!(back.vertices(), cube.vertices());
        assert_eq!(back.triangles(), cube.triangles());
    }

    #[test]
    fn counts_match_header() {
        let sq = Mesh::structured_square(3, DiagonalPattern::Alternating).unwrap();
        let text = format_gmsh(&sq);
        let back = parse_gmsh(&text).unwrap();
        assert_eq!(back.n_vertices(), 16);
        assert_eq!(back.n_triangles(), 18);
    }

    #[test]
    fn quadrilaterals_are_rejected() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n\
                    $EndNodes\n$Elements\n1\n1 3 2 1 1 1 2 3 4\n$EndElements\n";
        assert!(matches!(parse_gmsh(text), Err(Error::UnsupportedElement(3))));
    }

    #[test]
    fn lower_dimensional_elements_and_sparse_ids() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$PhysicalNames\n1\n2 1 \"s\"\n$EndPhysicalNames\n\
                    $Nodes\n3\n10 0 0 0\n20 1 0 0\n30 0 1 0\n$EndNodes\n$Elements\n3\n\
                    1 15 2 0 1 10\n2 1 2 0 1 10 20\n3 2 2 0 1 10 20 30\n$EndElements\n";
        let m = parse_gmsh(text).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn malformed_sections() {
        assert!(matches!(parse_gmsh("$Nodes\n2\n1 0 0 0\n"), Err(Error::MalformedGmsh(_))));
        assert!(matches!(parse_gmsh("garbage"), Err(Error::MalformedGmsh(_))));
        let bad_ref = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n1\n1 0 0 0\n$EndNodes\n\
                       $Elements\n1\n1 2 0 1 2 3\n$EndElements\n";
        assert!(matches!(parse_gmsh(bad_ref), Err(Error::MalformedGmsh(_))));
    }
}
