//! Dihedral-group augmentation: flips and right-angle rotations, no color
//! transforms.

use ndarray::Array3;

use crate::domain::Patch;
use crate::error::{Error, Result};

/// The eight dihedral transforms, by op id:
/// 0 identity, 1/2/3 rotations by 90/180/270 degrees (counterclockwise),
/// 4 horizontal flip, 5 vertical flip, 6 transpose, 7 anti-transpose.
pub const DIHEDRAL_OPS: usize = 8;

/// Source coordinate for output position `(r, c)` in an `n`-sided square.
fn source_coord(op_id: usize, n: usize, r: usize, c: usize) -> (usize, usize) {
    let m = n - 1;
    match op_id {
        0 => (r, c),
        1 => (c, m - r),
        2 => (m - r, m - c),
        3 => (m - c, r),
        4 => (r, m - c),
        5 => (m - r, c),
        6 => (c, r),
        7 => (m - c, m - r),
        _ => unreachable!("validated op id"),
    }
}

/// Applies one dihedral transform to a square `(H, H, C)` array.
pub fn augment_array<A: Copy + num_traits::Zero>(
    arr: &Array3<A>,
    op_id: usize,
) -> Result<Array3<A>> {
    if op_id >= DIHEDRAL_OPS {
        return Err(Error::Config(format!(
            "augment op_id {op_id} out of range 0..{DIHEDRAL_OPS}"
        )));
    }
    let shape = arr.shape();
    if shape[0] != shape[1] {
        return Err(Error::Precondition(format!(
            "augmentation requires a square array, got {}x{}",
            shape[0], shape[1]
        )));
    }
    let (n, ch) = (shape[0], shape[2]);
    let mut out = Array3::zeros((n, n, ch));
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = source_coord(op_id, n, r, c);
            for k in 0..ch {
                out[[r, c, k]] = arr[[sr, sc, k]];
            }
        }
    }
    Ok(out)
}

/// Applies one of the eight dihedral transforms to a patch. Stain tag,
/// provenance, and (by construction) the pixel multiset are preserved.
pub fn augment(patch: &Patch, op_id: usize) -> Result<Patch> {
    let pixels = augment_array(&patch.pixels, op_id)?;
    Ok(Patch {
        pixels,
        stain: patch.stain,
        source_id: patch.source_id.clone(),
        center: patch.center,
    })
}

/// The op id whose transform equals applying `first` then `second`.
pub fn compose_ops(first: usize, second: usize) -> Result<usize> {
    if first >= DIHEDRAL_OPS || second >= DIHEDRAL_OPS {
        return Err(Error::Config("op id out of range".into()));
    }
    // Track where two probe points land; that identifies the group element.
    let n = 4usize;
    let probe = |op: usize, p: (usize, usize)| -> (usize, usize) {
        // source_coord gives the inverse map; invert by search.
        for r in 0..n {
            for c in 0..n {
                if source_coord(op, n, r, c) == p {
                    return (r, c);
                }
            }
        }
        unreachable!("bijective transform");
    };
    let p1 = probe(second, probe(first, (0, 1)));
    let p2 = probe(second, probe(first, (1, 0)));
    for op in 0..DIHEDRAL_OPS {
        if probe(op, (0, 1)) == p1 && probe(op, (1, 0)) == p2 {
            return Ok(op);
        }
    }
    unreachable!("dihedral group is closed");
}
