//! Legacy ASCII VTK output for voxel fields (STRUCTURED_POINTS, one
//! scalar field per file). Enough for snapshot inspection in ParaView;
//! not a general VTK implementation.

use crate::grid::GridShape;
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Write one cell-centered scalar field. `spacing` is per axis; grids of
/// dimension below three are padded with singleton axes.
pub fn write_scalar_field(
    path: &Path,
    name: &str,
    shape: &GridShape,
    spacing: &[f64],
    data: &[f64],
) -> Result<()> {
    if data.len() != shape.len() {
        return Err(Error::ResolutionMismatch(format!(
            "{} values for {} voxels",
            data.len(),
            shape.len()
        )));
    }
    let d = shape.dim();
    let mut dims = [1usize; 3];
    let mut h = [1.0f64; 3];
    for a in 0..d {
        dims[a] = shape.dims()[a];
        h[a] = spacing[a];
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# vtk DataFile Version 3.0")?;
    writeln!(f, "{name}")?;
    writeln!(f, "ASCII")?;
    writeln!(f, "DATASET STRUCTURED_POINTS")?;
    // cell data: point dims are voxel dims + 1
    writeln!(f, "DIMENSIONS {} {} {}", dims[0] + 1, dims[1] + 1, dims[2] + 1)?;
    writeln!(f, "ORIGIN 0 0 0")?;
    writeln!(f, "SPACING {:.17e} {:.17e} {:.17e}", h[0], h[1], h[2])?;
    writeln!(f, "CELL_DATA {}", shape.len())?;
    writeln!(f, "SCALARS {name} double 1")?;
    writeln!(f, "LOOKUP_TABLE default")?;
    // VTK expects x fastest; our storage is row-major (last axis fastest),
    // so emit in x-fastest order explicitly.
    let mut coords = vec![0usize; d];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let raw = [i, j, k];
                coords.copy_from_slice(&raw[..d]);
                writeln!(f, "{:.17e}", data[shape.linear(&coords)])?;
            }
        }
    }
    f.flush()?;
    Ok(())
}
