//! Three-scale periodic geometry: reference cells Y (cellular scale) and
//! Z (mitochondrial scale), and the tiled perforated macro domain.
//!
//! Geometry is voxelized. Interface areas are voxel-facet sums and
//! therefore converge to the l1 (staircase) perimeter of a smooth
//! inclusion, not the Euclidean one; the membrane-to-volume ratio used by
//! the solvers is defined from this voxel geometry consistently
//! throughout the crate.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use crate::grid::GridShape;
use crate::{Error, Result};

/// Which reference cell a geometry describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    /// Cellular scale Y = Y_i ∪ Y_e ∪ Γ^y.
    Meso,
    /// Mitochondrial scale Z = Z_c ∪ Z_m ∪ Γ^z.
    Micro,
}

/// Per-voxel subdomain tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Intra,
    Extra,
    Cyto,
    Mito,
}

impl Label {
    fn to_char(self) -> char {
        match self {
            Label::Intra => 'I',
            Label::Extra => 'E',
            Label::Cyto => 'C',
            Label::Mito => 'M',
        }
    }

    fn from_char(c: char) -> Result<Self> {
        match c {
            'I' => Ok(Label::Intra),
            'E' => Ok(Label::Extra),
            'C' => Ok(Label::Cyto),
            'M' => Ok(Label::Mito),
            _ => Err(Error::Parse(format!("unknown label character '{c}'"))),
        }
    }

    /// The inclusion tag for each cell kind.
    fn inclusion(kind: CellKind) -> Self {
        match kind {
            CellKind::Meso => Label::Intra,
            CellKind::Micro => Label::Mito,
        }
    }

    fn complement(kind: CellKind) -> Self {
        match kind {
            CellKind::Meso => Label::Extra,
            CellKind::Micro => Label::Cyto,
        }
    }
}

/// Shape of the centered inclusion in a standard cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InclusionShape {
    None,
    Square,
    Disk,
    /// A straight strip spanning the cell along `axis`, confined to
    /// `fraction` of the length in every other axis.
    Channel { axis: usize },
    /// Union of channels along every axis (a "plus" cross); connected
    /// under the periodic identification.
    Cross,
}

/// A voxel face between two voxels of different tags.
///
/// `lo` is the voxel on the negative side along `axis`; its neighbour is
/// `lo + e_axis` with periodic wrap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceFacet {
    pub lo: usize,
    pub axis: usize,
    pub area: f64,
}

/// A voxelized periodic reference cell with subdomain labels.
#[derive(Debug, Clone)]
pub struct UnitCellGeometry {
    kind: CellKind,
    cell_lengths: Vec<f64>,
    shape: GridShape,
    labels: Vec<Label>,
    facets: Vec<InterfaceFacet>,
}

impl UnitCellGeometry {
    /// Build from explicit labels; validates connectedness of both
    /// regions (a region that is absent counts as connected).
    pub fn from_labels(
        kind: CellKind,
        cell_lengths: &[f64],
        resolution: &[usize],
        labels: Vec<Label>,
    ) -> Result<Self> {
        let shape = GridShape::new(resolution);
        if cell_lengths.len() != shape.dim() {
            return Err(Error::InvalidParameter(
                "cell_lengths and resolution dimension mismatch".into(),
            ));
        }
        if cell_lengths.iter().any(|&l| l <= 0.0) {
            return Err(Error::InvalidParameter("cell lengths must be positive".into()));
        }
        if labels.len() != shape.len() {
            return Err(Error::InvalidParameter("label count does not match resolution".into()));
        }
        let valid = |l: Label| match kind {
            CellKind::Meso => matches!(l, Label::Intra | Label::Extra),
            CellKind::Micro => matches!(l, Label::Cyto | Label::Mito),
        };
        if !labels.iter().all(|&l| valid(l)) {
            return Err(Error::InvalidParameter("label inconsistent with cell kind".into()));
        }
        let mut cell =
            Self { kind, cell_lengths: cell_lengths.to_vec(), shape, labels, facets: Vec::new() };
        cell.facets = cell.collect_facets();
        for tag in [Label::inclusion(kind), Label::complement(kind)] {
            if !cell.region_connected(tag) {
                return Err(Error::DisconnectedRegion { region: format!("{tag:?}") });
            }
        }
        Ok(cell)
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn cell_lengths(&self) -> &[f64] {
        &self.cell_lengths
    }

    pub fn resolution(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, voxel: usize) -> Label {
        self.labels[voxel]
    }

    pub fn interface_facets(&self) -> &[InterfaceFacet] {
        &self.facets
    }

    /// Voxel spacing per axis.
    pub fn spacing(&self) -> Vec<f64> {
        self.cell_lengths
            .iter()
            .zip(self.shape.dims())
            .map(|(&l, &n)| l / n as f64)
            .collect()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// |Y| (or |Z|): the full cell measure.
    pub fn cell_volume(&self) -> f64 {
        self.cell_lengths.iter().product()
    }

    fn facet_area(&self, axis: usize) -> f64 {
        let h = self.spacing();
        (0..self.dim()).filter(|&a| a != axis).map(|a| h[a]).product()
    }

    fn collect_facets(&self) -> Vec<InterfaceFacet> {
        let mut facets = Vec::new();
        let d = self.dim();
        let dims = self.shape.dims().to_vec();
        self.shape.for_each(|idx, coords| {
            for axis in 0..d {
                let mut nb = [0usize; 3];
                nb[..d].copy_from_slice(coords);
                nb[axis] = (coords[axis] + 1) % dims[axis];
                let nidx = self.shape.linear(&nb[..d]);
                if self.labels[idx] != self.labels[nidx] {
                    facets.push(InterfaceFacet { lo: idx, axis, area: self.facet_area(axis) });
                }
            }
        });
        facets
    }

    /// Edge-connectivity of all voxels with the given tag, including
    /// across the periodic wrap-around.
    fn region_connected(&self, tag: Label) -> bool {
        let n = self.shape.len();
        let total: usize = self.labels.iter().filter(|&&l| l == tag).count();
        if total == 0 {
            return true;
        }
        let start = self.labels.iter().position(|&l| l == tag).unwrap();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        let d = self.dim();
        let dims = self.shape.dims().to_vec();
        let mut count = 1usize;
        let mut coords = [0usize; 3];
        while let Some(v) = queue.pop_front() {
            self.shape.decode(v, &mut coords[..d]);
            for axis in 0..d {
                for step in [1usize, dims[axis] - 1] {
                    let mut nb = coords;
                    nb[axis] = (coords[axis] + step) % dims[axis];
                    let nidx = self.shape.linear(&nb[..d]);
                    if !seen[nidx] && self.labels[nidx] == tag {
                        seen[nidx] = true;
                        count += 1;
                        queue.push_back(nidx);
                    }
                }
            }
        }
        count == total
    }

    /// Region volumes (inclusion-complement first? No: returns
    /// (complement, inclusion) as (matrix, inclusion) volumes) and the
    /// interface area |Γ|.
    ///
    /// Order: the conductive region (EXTRA resp. CYTO) first, then the
    /// inclusion (INTRA resp. MITO).
    pub fn measure_interface(&self) -> (f64, f64, f64) {
        let vv = self.voxel_volume();
        let inc = Label::inclusion(self.kind);
        let n_inc = self.labels.iter().filter(|&&l| l == inc).count();
        let n_comp = self.labels.len() - n_inc;
        let area: f64 = self.facets.iter().map(|f| f.area).sum();
        (n_comp as f64 * vv, n_inc as f64 * vv, area)
    }

    /// Volume of the region carrying `tag`.
    pub fn region_volume(&self, tag: Label) -> f64 {
        self.voxel_volume() * self.labels.iter().filter(|&&l| l == tag).count() as f64
    }

    /// Volume fraction of the region carrying `tag`.
    pub fn region_fraction(&self, tag: Label) -> f64 {
        self.region_volume(tag) / self.cell_volume()
    }

    /// |Γ|/|cell|: membrane area per unit cell volume.
    pub fn interface_per_volume(&self) -> f64 {
        let (_, _, area) = self.measure_interface();
        area / self.cell_volume()
    }

    /// Serialize to the plain text cell format:
    /// one header line `dim res_1..res_d len_1..len_d`, then row-major
    /// label characters in lines of the last-axis extent.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = self.dim();
        write!(s, "{d}").unwrap();
        for &r in self.shape.dims() {
            write!(s, " {r}").unwrap();
        }
        for &l in &self.cell_lengths {
            write!(s, " {l}").unwrap();
        }
        s.push('\n');
        let row = *self.shape.dims().last().unwrap();
        for (i, &l) in self.labels.iter().enumerate() {
            s.push(l.to_char());
            if (i + 1) % row == 0 {
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty cell file".into()))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        let d: usize = tokens
            .first()
            .ok_or_else(|| Error::Parse("missing dimension".into()))?
            .parse()
            .map_err(|_| Error::Parse("bad dimension".into()))?;
        if tokens.len() != 1 + 2 * d {
            return Err(Error::Parse(format!(
                "header needs 1 + 2*{d} tokens, got {}",
                tokens.len()
            )));
        }
        let res: Vec<usize> = tokens[1..1 + d]
            .iter()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad resolution '{t}'"))))
            .collect::<Result<_>>()?;
        let lengths: Vec<f64> = tokens[1 + d..]
            .iter()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad length '{t}'"))))
            .collect::<Result<_>>()?;
        let mut labels = Vec::new();
        for line in lines {
            for c in line.trim().chars() {
                labels.push(Label::from_char(c)?);
            }
        }
        let kind = match labels.first() {
            Some(Label::Intra) | Some(Label::Extra) => CellKind::Meso,
            Some(Label::Cyto) | Some(Label::Mito) => CellKind::Micro,
            None => return Err(Error::Parse("cell file has no labels".into())),
        };
        Self::from_labels(kind, &lengths, &res, labels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Build a unit reference cell with a centered, axis-aligned inclusion.
///
/// `inclusion_fraction` is the linear size ratio of the inclusion (side
/// for a square, diameter for a disk, width for channel/cross).
pub fn build_standard_cell(
    kind: CellKind,
    dim: usize,
    inclusion_shape: InclusionShape,
    inclusion_fraction: f64,
    resolution: usize,
) -> Result<UnitCellGeometry> {
    if resolution < 4 {
        return Err(Error::InvalidParameter(format!(
            "resolution must be >= 4, got {resolution}"
        )));
    }
    if !(0.0..1.0).contains(&inclusion_fraction) {
        return Err(Error::InvalidFraction {
            fraction: inclusion_fraction,
            reason: "must lie in [0, 1)".into(),
        });
    }
    let lengths = vec![1.0; dim];
    let res = vec![resolution; dim];
    let shape = GridShape::new(&res);
    let inc = Label::inclusion(kind);
    let comp = Label::complement(kind);
    let half = inclusion_fraction / 2.0;
    let inside = |coords: &[usize]| -> bool {
        let center: Vec<f64> =
            coords.iter().map(|&c| (c as f64 + 0.5) / resolution as f64 - 0.5).collect();
        match inclusion_shape {
            InclusionShape::None => false,
            InclusionShape::Square => center.iter().all(|&c| c.abs() < half),
            InclusionShape::Disk => {
                center.iter().map(|c| c * c).sum::<f64>().sqrt() < half
            }
            InclusionShape::Channel { axis } => {
                center.iter().enumerate().all(|(a, &c)| a == axis || c.abs() < half)
            }
            InclusionShape::Cross => (0..dim)
                .any(|axis| center.iter().enumerate().all(|(a, &c)| a == axis || c.abs() < half)),
        }
    };
    let mut labels = vec![comp; shape.len()];
    shape.for_each(|idx, coords| {
        if inside(coords) {
            labels[idx] = inc;
        }
    });
    // The micro inclusion must stay strictly interior (Γ^z = ∂Z_m); a
    // compact inclusion touching the boundary would also touch its
    // periodic images. Channels wrap by design and are exempt.
    let compact = matches!(inclusion_shape, InclusionShape::Square | InclusionShape::Disk);
    if compact {
        let mut touches = false;
        shape.for_each(|idx, coords| {
            if labels[idx] == inc
                && coords.iter().enumerate().any(|(a, &c)| c == 0 || c == res[a] - 1)
            {
                touches = true;
            }
        });
        if touches {
            return Err(Error::InvalidFraction {
                fraction: inclusion_fraction,
                reason: "inclusion touches the cell boundary".into(),
            });
        }
    }
    UnitCellGeometry::from_labels(kind, &lengths, &res, labels)
}

/// Per-voxel tag of the tiled macro domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacroTag {
    /// Ω_i^{ε,δ}: intracellular and outside the mitochondria.
    IntraCyto,
    /// Mitochondrial holes (absent from both conductive media).
    IntraMito,
    /// Ω_e^ε.
    Extra,
}

/// The three-scale tiling parameters.
#[derive(Debug, Clone)]
pub struct TiledDomainSpec {
    macro_lengths: Vec<f64>,
    epsilon: f64,
    delta: f64,
    meso_cell: UnitCellGeometry,
    micro_cell: UnitCellGeometry,
}

impl TiledDomainSpec {
    pub fn new(
        macro_lengths: &[f64],
        epsilon: f64,
        delta: f64,
        meso_cell: UnitCellGeometry,
        micro_cell: UnitCellGeometry,
    ) -> Result<Self> {
        let d = meso_cell.dim();
        if macro_lengths.len() != d || micro_cell.dim() != d {
            return Err(Error::InvalidParameter("dimension mismatch in tiled spec".into()));
        }
        if meso_cell.kind() != CellKind::Meso || micro_cell.kind() != CellKind::Micro {
            return Err(Error::InvalidParameter("cell kinds swapped in tiled spec".into()));
        }
        if !(epsilon > 0.0) || !(delta > 0.0) {
            return Err(Error::InvalidParameter("epsilon and delta must be positive".into()));
        }
        if delta > epsilon + 1e-14 {
            return Err(Error::InvalidParameter(format!(
                "scales.delta: delta = {delta} exceeds epsilon = {epsilon}"
            )));
        }
        for (a, &ll) in macro_lengths.iter().enumerate() {
            for (scale, name) in [(epsilon, "epsilon"), (delta, "delta")] {
                let cells = ll / (scale * meso_cell.cell_lengths()[a.min(d - 1)]);
                if (cells - cells.round()).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "{name} does not tile axis {a} exactly ({cells} cells)"
                    )));
                }
            }
        }
        let ratio = epsilon / delta;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::IncommensurateResolution(format!(
                "epsilon/delta = {ratio} is not an integer"
            )));
        }
        Ok(Self {
            macro_lengths: macro_lengths.to_vec(),
            epsilon,
            delta,
            meso_cell,
            micro_cell,
        })
    }

    pub fn dim(&self) -> usize {
        self.meso_cell.dim()
    }

    pub fn macro_lengths(&self) -> &[f64] {
        &self.macro_lengths
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn meso_cell(&self) -> &UnitCellGeometry {
        &self.meso_cell
    }

    pub fn micro_cell(&self) -> &UnitCellGeometry {
        &self.micro_cell
    }

    /// ε-cells per axis.
    pub fn cells_per_axis(&self) -> Vec<usize> {
        (0..self.dim())
            .map(|a| {
                (self.macro_lengths[a] / (self.epsilon * self.meso_cell.cell_lengths()[a])).round()
                    as usize
            })
            .collect()
    }

    /// δ-cells per ε-cell (per axis).
    pub fn micro_per_meso(&self) -> usize {
        (self.epsilon / self.delta).round() as usize
    }
}

/// The labeled macro voxel grid realizing Ω_i^{ε,δ}, its holes, and Ω_e^ε.
#[derive(Debug, Clone)]
pub struct TiledGrid {
    shape: GridShape,
    cells: GridShape,
    /// Voxels per ε-cell per axis (equals the meso-cell resolution).
    local: GridShape,
    tags: Vec<MacroTag>,
    spacing: Vec<f64>,
    epsilon: f64,
    delta: f64,
    macro_lengths: Vec<f64>,
}

/// Tile the macro domain from the reference cells.
///
/// The macro grid carries the meso resolution inside each ε-cell; each
/// δ-cell inside must be an exact voxel refinement of the micro cell.
pub fn tile_microdomain(spec: &TiledDomainSpec) -> Result<TiledGrid> {
    let d = spec.dim();
    let meso = spec.meso_cell();
    let micro = spec.micro_cell();
    let n_loc = meso.resolution().to_vec();
    let m = spec.micro_per_meso();
    for a in 0..d {
        if n_loc[a] % m != 0 {
            return Err(Error::IncommensurateResolution(format!(
                "meso resolution {} not divisible by epsilon/delta = {m} on axis {a}",
                n_loc[a]
            )));
        }
        let per_micro = n_loc[a] / m;
        if per_micro % micro.resolution()[a] != 0 {
            return Err(Error::IncommensurateResolution(format!(
                "{per_micro} voxels per delta-cell not divisible by micro resolution {} on axis {a}",
                micro.resolution()[a]
            )));
        }
    }
    let cells = GridShape::new(&spec.cells_per_axis());
    let local = GridShape::new(&n_loc);
    let mut dims = vec![0usize; d];
    for a in 0..d {
        dims[a] = cells.dims()[a] * n_loc[a];
    }
    let shape = GridShape::new(&dims);
    let spacing: Vec<f64> =
        (0..d).map(|a| spec.macro_lengths()[a] / dims[a] as f64).collect();
    let mut tags = vec![MacroTag::Extra; shape.len()];
    shape.for_each(|idx, coords| {
        // local voxel inside the ε-cell
        let mut loc = [0usize; 3];
        for a in 0..d {
            loc[a] = coords[a] % n_loc[a];
        }
        let meso_label = meso.label(meso.shape().linear(&loc[..d]));
        tags[idx] = match meso_label {
            Label::Extra => MacroTag::Extra,
            Label::Intra => {
                // voxel inside its δ-cell, mapped to the micro resolution
                let mut zc = [0usize; 3];
                for a in 0..d {
                    let per_micro = n_loc[a] / m;
                    let within = loc[a] % per_micro;
                    zc[a] = within * micro.resolution()[a] / per_micro;
                }
                match micro.label(micro.shape().linear(&zc[..d])) {
                    Label::Cyto => MacroTag::IntraCyto,
                    Label::Mito => MacroTag::IntraMito,
                    _ => unreachable!(),
                }
            }
            _ => unreachable!(),
        };
    });
    Ok(TiledGrid {
        shape,
        cells,
        local,
        tags,
        spacing,
        epsilon: spec.epsilon(),
        delta: spec.delta(),
        macro_lengths: spec.macro_lengths().to_vec(),
    })
}

impl TiledGrid {
    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn cells(&self) -> &GridShape {
        &self.cells
    }

    pub fn local(&self) -> &GridShape {
        &self.local
    }

    pub fn tags(&self) -> &[MacroTag] {
        &self.tags
    }

    pub fn tag(&self, voxel: usize) -> MacroTag {
        self.tags[voxel]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn macro_lengths(&self) -> &[f64] {
        &self.macro_lengths
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Physical center of a voxel.
    pub fn voxel_center(&self, coords: &[usize]) -> Vec<f64> {
        coords
            .iter()
            .zip(&self.spacing)
            .map(|(&c, &h)| (c as f64 + 0.5) * h)
            .collect()
    }

    /// Split a global voxel multi-index into (ε-cell index, local index).
    pub fn split(&self, coords: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let d = self.dim();
        let mut cell = vec![0; d];
        let mut loc = vec![0; d];
        for a in 0..d {
            cell[a] = coords[a] / self.local.dims()[a];
            loc[a] = coords[a] % self.local.dims()[a];
        }
        (cell, loc)
    }

    fn facet_area(&self, axis: usize) -> f64 {
        (0..self.dim()).filter(|&a| a != axis).map(|a| self.spacing[a]).product()
    }

    /// Γ_ε: interior faces between IntraCyto and Extra voxels.
    /// No wrap-around — Ω has an external boundary.
    pub fn gamma_eps_facets(&self) -> Vec<InterfaceFacet> {
        self.region_facets(MacroTag::IntraCyto, MacroTag::Extra)
    }

    /// Γ_δ: interior faces between IntraCyto and IntraMito voxels.
    pub fn gamma_delta_facets(&self) -> Vec<InterfaceFacet> {
        self.region_facets(MacroTag::IntraCyto, MacroTag::IntraMito)
    }

    fn region_facets(&self, a_tag: MacroTag, b_tag: MacroTag) -> Vec<InterfaceFacet> {
        let d = self.dim();
        let dims = self.shape.dims().to_vec();
        let mut facets = Vec::new();
        self.shape.for_each(|idx, coords| {
            for axis in 0..d {
                if coords[axis] + 1 >= dims[axis] {
                    continue;
                }
                let mut nb = [0usize; 3];
                nb[..d].copy_from_slice(coords);
                nb[axis] += 1;
                let nidx = self.shape.linear(&nb[..d]);
                let pair = (self.tags[idx], self.tags[nidx]);
                if pair == (a_tag, b_tag) || pair == (b_tag, a_tag) {
                    facets.push(InterfaceFacet { lo: idx, axis, area: self.facet_area(axis) });
                }
            }
        });
        facets
    }

    /// Volume fraction of a tag over the whole domain.
    pub fn tag_fraction(&self, tag: MacroTag) -> f64 {
        self.tags.iter().filter(|&&t| t == tag).count() as f64 / self.tags.len() as f64
    }
}
