//! Helpers shared by the integration and acceptance suites.

use std::path::Path;

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Every file in `a` equals its counterpart in `b`, manifests compared
/// without their timestamp line.
pub fn assert_trees_match(a: &Path, b: &Path) {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut names_b: Vec<String> = std::fs::read_dir(b)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names_b.sort();
    assert_eq!(names, names_b, "{} and {} differ in content", a.display(), b.display());
    for name in names {
        let (pa, pb) = (a.join(&name), b.join(&name));
        if pa.is_dir() {
            assert_trees_match(&pa, &pb);
        } else if name == "run.manifest" {
            let strip = |p: &Path| {
                String::from_utf8(read(p))
                    .unwrap()
                    .lines()
                    .filter(|l| !l.starts_with("timestamp-unix"))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(&pa), strip(&pb), "{name} differs beyond its timestamp");
        } else {
            assert_eq!(read(&pa), read(&pb), "{name} differs between runs");
        }
    }
}
