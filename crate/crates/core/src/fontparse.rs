//! TrueType outline extraction.
//!
//! Reads the minimal subset of the sfnt container needed to turn a character
//! into closed cubic contours: `head`, `maxp`, `cmap`, `loca`, `glyf` and,
//! when present, `hhea`/`hmtx` for advance widths. Quadratic outlines are
//! degree-elevated, coordinates are scaled to pixels and flipped so that y
//! grows downward.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{flatten_contour, point_in_polygon, signed_area, CubicSegment, Point};

/// Samples per segment used when deciding contour orientation.
const ORIENTATION_SUBDIV: usize = 16;

const BUILTIN_FONT: &[u8] = include_bytes!("../assets/builtin.ttf");

/// Bytes of the font shipped with the crate. `'A'` is a 100×100 unit square,
/// `'O'` a square ring; see `python/make_fonts.py` for the full glyph list.
pub fn builtin_font_bytes() -> &'static [u8] {
    BUILTIN_FONT
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FontError {
    #[error("malformed font: {0}")]
    MalformedFont(String),
    #[error("unsupported font: {0}")]
    UnsupportedFont(String),
    #[error("no glyph for {0:?}")]
    MissingGlyph(char),
    #[error("em size must be positive and finite, got {0}")]
    BadEmSize(f64),
    #[error("degenerate outline: every contour has zero area")]
    DegenerateOutline,
}

fn malformed(msg: impl Into<String>) -> FontError {
    FontError::MalformedFont(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    PositiveArea,
    NegativeArea,
}

impl Orientation {
    fn of_area(area: f64) -> Self {
        if area < 0.0 {
            Orientation::NegativeArea
        } else {
            Orientation::PositiveArea
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub segments: Vec<CubicSegment>,
    pub orientation: Orientation,
}

impl Contour {
    /// Builds a contour and derives its orientation flag from the geometry.
    pub fn new(segments: Vec<CubicSegment>) -> Self {
        let orientation = Orientation::of_area(signed_area(&flatten_contour(&segments, ORIENTATION_SUBDIV)));
        Self { segments, orientation }
    }

    pub fn flattened_area(&self) -> f64 {
        signed_area(&flatten_contour(&self.segments, ORIENTATION_SUBDIV))
    }

    pub fn is_closed(&self) -> bool {
        let n = self.segments.len();
        n > 0 && (0..n).all(|i| self.segments[i].p3 == self.segments[(i + 1) % n].p0)
    }

    fn reversed(&self) -> Contour {
        Contour::new(self.segments.iter().rev().map(CubicSegment::reversed).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphOutline {
    pub contours: Vec<Contour>,
    pub em_size_px: f64,
    pub advance_px: f64,
}

impl GlyphOutline {
    pub fn segment_count(&self) -> usize {
        self.contours.iter().map(|c| c.segments.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.contours.is_empty()
    }

    /// Axis-aligned bounds of all control points, `None` for empty glyphs.
    pub fn control_bounds(&self) -> Option<(Point, Point)> {
        let mut pts = self.contours.iter().flat_map(|c| c.segments.iter().flat_map(|s| s.points()));
        let first = pts.next()?;
        Some(pts.fold((first, first), |(lo, hi), p| {
            (Point::new(lo.x.min(p.x), lo.y.min(p.y)), Point::new(hi.x.max(p.x), hi.y.max(p.y)))
        }))
    }

    /// Applies `p -> p * scale + offset` to every control point.
    pub fn transformed(&self, scale: f64, offset: Point) -> GlyphOutline {
        let map = |p: Point| p * scale + offset;
        GlyphOutline {
            contours: self
                .contours
                .iter()
                .map(|c| Contour {
                    segments: c
                        .segments
                        .iter()
                        .map(|s| CubicSegment::new(map(s.p0), map(s.p1), map(s.p2), map(s.p3)))
                        .collect(),
                    orientation: c.orientation,
                })
                .collect(),
            em_size_px: self.em_size_px * scale,
            advance_px: self.advance_px * scale,
        }
    }

    /// Uniformly scales and centers the glyph so its control bounds fill a
    /// `width`×`height` canvas minus `margin` pixels on every side.
    pub fn fit_to_canvas(&self, width: usize, height: usize, margin: f64) -> GlyphOutline {
        let Some((lo, hi)) = self.control_bounds() else {
            return self.clone();
        };
        let (w, h) = (hi.x - lo.x, hi.y - lo.y);
        let avail_w = (width as f64 - 2.0 * margin).max(1.0);
        let avail_h = (height as f64 - 2.0 * margin).max(1.0);
        let scale = if w > 0.0 || h > 0.0 {
            (avail_w / w.max(f64::MIN_POSITIVE)).min(avail_h / h.max(f64::MIN_POSITIVE))
        } else {
            1.0
        };
        let center = Point::new(width as f64 / 2.0, height as f64 / 2.0);
        let glyph_center = Point::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
        self.transformed(scale, center - glyph_center * scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct RawPoint {
    x: f64,
    y: f64,
    on_curve: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Component {
    glyph_id: u16,
    dx: i32,
    dy: i32,
    xy_values: bool,
    transformed: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum GlyphRecord {
    Empty,
    Simple(Vec<Vec<RawPoint>>),
    Composite(Vec<Component>),
}

#[derive(Debug, Clone)]
pub struct FontFace {
    units_per_em: u16,
    glyph_index_map: HashMap<char, u16>,
    glyphs: Vec<GlyphRecord>,
    advances: Option<Vec<u16>>,
}

impl FontFace {
    pub fn units_per_em(&self) -> u16 {
        self.units_per_em
    }

    pub fn glyph_id(&self, c: char) -> Option<u16> {
        self.glyph_index_map.get(&c).copied()
    }

    pub fn has_glyph(&self, c: char) -> bool {
        self.glyph_index_map.contains_key(&c)
    }

    pub fn num_glyphs(&self) -> usize {
        self.glyphs.len()
    }

    fn advance(&self, gid: u16) -> Option<u16> {
        let adv = self.advances.as_ref()?;
        adv.get(gid as usize).or_else(|| adv.last()).copied()
    }
}

struct Reader<'a> {
    data: &'a [u8],
}

impl<'a> Reader<'a> {
    fn slice(&self, offset: usize, len: usize) -> Result<&'a [u8], FontError> {
        offset
            .checked_add(len)
            .and_then(|end| self.data.get(offset..end))
            .ok_or_else(|| malformed(format!("read of {len} bytes at {offset} past end ({})", self.data.len())))
    }

    fn u8(&self, offset: usize) -> Result<u8, FontError> {
        Ok(self.slice(offset, 1)?[0])
    }

    fn u16(&self, offset: usize) -> Result<u16, FontError> {
        let b = self.slice(offset, 2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn i16(&self, offset: usize) -> Result<i16, FontError> {
        Ok(self.u16(offset)? as i16)
    }

    fn u32(&self, offset: usize) -> Result<u32, FontError> {
        let b = self.slice(offset, 4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a TrueType font.
pub fn load_font(bytes: &[u8]) -> Result<FontFace, FontError> {
    let r = Reader { data: bytes };
    if bytes.is_empty() {
        return Err(malformed("empty input"));
    }
    let version = r.u32(0)?;
    match version {
        0x0001_0000 | 0x7472_7565 => {} // 1.0 / 'true'
        0x4F54_544F => {
            return Err(FontError::UnsupportedFont("CFF outlines ('OTTO') are not supported".into()))
        }
        0x7474_6366 => return Err(FontError::UnsupportedFont("font collections are not supported".into())),
        other => return Err(malformed(format!("unknown sfnt version {other:#010x}"))),
    }
    let num_tables = r.u16(4)? as usize;
    let mut tables: HashMap<[u8; 4], &[u8]> = HashMap::new();
    for i in 0..num_tables {
        let rec = 12 + 16 * i;
        let tag: [u8; 4] = r.slice(rec, 4)?.try_into().expect("4 bytes");
        let offset = r.u32(rec + 8)? as usize;
        let length = r.u32(rec + 12)? as usize;
        let data = r.slice(offset, length).map_err(|_| {
            malformed(format!(
                "table '{}' at {offset}+{length} exceeds file size {}",
                String::from_utf8_lossy(&tag),
                bytes.len()
            ))
        })?;
        tables.insert(tag, data);
    }
    let table = |tag: &[u8; 4]| tables.get(tag).copied();

    let head = Reader {
        data: table(b"head").ok_or_else(|| malformed("missing 'head' table"))?,
    };
    let units_per_em = head.u16(18)?;
    if units_per_em < 16 {
        return Err(malformed(format!("units_per_em {units_per_em} is below 16")));
    }
    let long_loca = match head.i16(50)? {
        0 => false,
        1 => true,
        other => return Err(malformed(format!("indexToLocFormat {other}"))),
    };

    let (Some(glyf), Some(loca)) = (table(b"glyf"), table(b"loca")) else {
        return Err(FontError::UnsupportedFont("no 'glyf'/'loca' outline tables".into()));
    };
    let maxp = Reader {
        data: table(b"maxp").ok_or_else(|| malformed("missing 'maxp' table"))?,
    };
    let num_glyphs = maxp.u16(4)? as usize;
    let cmap = table(b"cmap").ok_or_else(|| malformed("missing 'cmap' table"))?;

    let loca = Reader { data: loca };
    let mut offsets = Vec::with_capacity(num_glyphs + 1);
    for i in 0..=num_glyphs {
        offsets.push(if long_loca {
            loca.u32(4 * i)? as usize
        } else {
            loca.u16(2 * i)? as usize * 2
        });
    }
    let mut glyphs = Vec::with_capacity(num_glyphs);
    for gid in 0..num_glyphs {
        let (start, end) = (offsets[gid], offsets[gid + 1]);
        if end < start || end > glyf.len() {
            return Err(malformed(format!("glyph {gid} spans {start}..{end}, glyf is {} bytes", glyf.len())));
        }
        glyphs.push(parse_glyph(&glyf[start..end], num_glyphs).map_err(|e| match e {
            FontError::MalformedFont(m) => malformed(format!("glyph {gid}: {m}")),
            other => other,
        })?);
    }

    let glyph_index_map = parse_cmap(cmap)?;
    if let Some((c, gid)) = glyph_index_map.iter().find(|(_, g)| **g as usize >= num_glyphs) {
        return Err(malformed(format!("cmap maps {c:?} to glyph {gid}, font has {num_glyphs}")));
    }

    let advances = match (table(b"hhea"), table(b"hmtx")) {
        (Some(hhea), Some(hmtx)) => {
            let n = Reader { data: hhea }.u16(34)? as usize;
            let hmtx = Reader { data: hmtx };
            (0..n).map(|i| hmtx.u16(4 * i)).collect::<Result<Vec<_>, _>>().ok()
        }
        _ => None,
    };

    Ok(FontFace {
        units_per_em,
        glyph_index_map,
        glyphs,
        advances,
    })
}

fn parse_glyph(data: &[u8], num_glyphs: usize) -> Result<GlyphRecord, FontError> {
    if data.is_empty() {
        return Ok(GlyphRecord::Empty);
    }
    let r = Reader { data };
    let n_contours = r.i16(0)?;
    if n_contours >= 0 {
        parse_simple(&r, n_contours as usize)
    } else {
        parse_composite(&r, num_glyphs)
    }
}

fn parse_simple(r: &Reader, n_contours: usize) -> Result<GlyphRecord, FontError> {
    if n_contours == 0 {
        return Ok(GlyphRecord::Empty);
    }
    let mut ends = Vec::with_capacity(n_contours);
    for i in 0..n_contours {
        let e = r.u16(10 + 2 * i)? as usize;
        if ends.last().is_some_and(|&prev| e <= prev) {
            return Err(malformed("contour end points are not increasing"));
        }
        ends.push(e);
    }
    let n_points = ends[n_contours - 1] + 1;
    let instr_len = r.u16(10 + 2 * n_contours)? as usize;
    let mut pos = 12 + 2 * n_contours + instr_len;

    let mut flags = Vec::with_capacity(n_points);
    while flags.len() < n_points {
        let f = r.u8(pos)?;
        pos += 1;
        flags.push(f);
        if f & 0x08 != 0 {
            let repeat = r.u8(pos)?;
            pos += 1;
            for _ in 0..repeat {
                flags.push(f);
            }
        }
    }
    if flags.len() > n_points {
        return Err(malformed("flag repeat overruns point count"));
    }

    let mut read_coords = |short_bit: u8, same_bit: u8| -> Result<Vec<f64>, FontError> {
        let mut acc = 0i32;
        let mut out = Vec::with_capacity(n_points);
        for &f in &flags {
            if f & short_bit != 0 {
                let d = i32::from(r.u8(pos)?);
                pos += 1;
                acc += if f & same_bit != 0 { d } else { -d };
            } else if f & same_bit == 0 {
                acc += i32::from(r.i16(pos)?);
                pos += 2;
            }
            out.push(f64::from(acc));
        }
        Ok(out)
    };
    let xs = read_coords(0x02, 0x10)?;
    let ys = read_coords(0x04, 0x20)?;

    let mut contours = Vec::with_capacity(n_contours);
    let mut start = 0;
    for &end in &ends {
        contours.push(
            (start..=end)
                .map(|i| RawPoint {
                    x: xs[i],
                    y: ys[i],
                    on_curve: flags[i] & 0x01 != 0,
                })
                .collect(),
        );
        start = end + 1;
    }
    Ok(GlyphRecord::Simple(contours))
}

fn parse_composite(r: &Reader, num_glyphs: usize) -> Result<GlyphRecord, FontError> {
    const WORDS: u16 = 0x0001;
    const XY_VALUES: u16 = 0x0002;
    const SCALE: u16 = 0x0008;
    const MORE: u16 = 0x0020;
    const XY_SCALE: u16 = 0x0040;
    const TWO_BY_TWO: u16 = 0x0080;

    let mut pos = 10;
    let mut components = Vec::new();
    loop {
        let flags = r.u16(pos)?;
        let glyph_id = r.u16(pos + 2)?;
        pos += 4;
        if glyph_id as usize >= num_glyphs {
            return Err(malformed(format!("component references glyph {glyph_id}")));
        }
        let xy_values = flags & XY_VALUES != 0;
        let (dx, dy) = match (flags & WORDS != 0, xy_values) {
            (true, true) => (i32::from(r.i16(pos)?), i32::from(r.i16(pos + 2)?)),
            (true, false) => (i32::from(r.u16(pos)?), i32::from(r.u16(pos + 2)?)),
            (false, true) => (i32::from(r.u8(pos)? as i8), i32::from(r.u8(pos + 1)? as i8)),
            (false, false) => (i32::from(r.u8(pos)?), i32::from(r.u8(pos + 1)?)),
        };
        pos += if flags & WORDS != 0 { 4 } else { 2 };
        let f2dot14 = |off: usize| -> Result<i16, FontError> { r.i16(off) };
        const ONE: i16 = 0x4000;
        let transformed = if flags & SCALE != 0 {
            let s = f2dot14(pos)?;
            pos += 2;
            s != ONE
        } else if flags & XY_SCALE != 0 {
            let (sx, sy) = (f2dot14(pos)?, f2dot14(pos + 2)?);
            pos += 4;
            sx != ONE || sy != ONE
        } else if flags & TWO_BY_TWO != 0 {
            let m = [f2dot14(pos)?, f2dot14(pos + 2)?, f2dot14(pos + 4)?, f2dot14(pos + 6)?];
            pos += 8;
            m != [ONE, 0, 0, ONE]
        } else {
            false
        };
        components.push(Component {
            glyph_id,
            dx,
            dy,
            xy_values,
            transformed,
        });
        if flags & MORE == 0 {
            break;
        }
    }
    Ok(GlyphRecord::Composite(components))
}

fn parse_cmap(data: &[u8]) -> Result<HashMap<char, u16>, FontError> {
    let r = Reader { data };
    let n = r.u16(2)? as usize;
    let mut candidates = Vec::new();
    for i in 0..n {
        let platform = r.u16(4 + 8 * i)?;
        let encoding = r.u16(6 + 8 * i)?;
        let offset = r.u32(8 + 8 * i)? as usize;
        let format = r.u16(offset)?;
        let rank = match (platform, encoding, format) {
            (3, 10, 12) | (0, 4, 12) | (0, 6, 12) => 0,
            (0, _, 12) => 1,
            (3, 1, 4) | (0, 3, 4) => 2,
            (0, _, 4) => 3,
            (_, _, 4 | 6 | 0) => 4,
            _ => continue,
        };
        candidates.push((rank, offset, format));
    }
    let &(_, offset, format) = candidates
        .iter()
        .min_by_key(|c| c.0)
        .ok_or_else(|| malformed("no supported cmap subtable"))?;
    let sub = Reader {
        data: r.slice(offset, data.len() - offset)?,
    };
    let mut map = HashMap::new();
    let mut insert = |code: u32, gid: u16| {
        if gid != 0 {
            if let Some(c) = char::from_u32(code) {
                map.insert(c, gid);
            }
        }
    };
    match format {
        0 => {
            for code in 0..256u32 {
                insert(code, u16::from(sub.u8(6 + code as usize)?));
            }
        }
        4 => {
            let seg_x2 = sub.u16(6)? as usize;
            let seg_count = seg_x2 / 2;
            let ends = 14;
            let starts = ends + seg_x2 + 2;
            let deltas = starts + seg_x2;
            let range_offsets = deltas + seg_x2;
            for s in 0..seg_count {
                let end = sub.u16(ends + 2 * s)?;
                let start = sub.u16(starts + 2 * s)?;
                let delta = sub.u16(deltas + 2 * s)?;
                let ro_pos = range_offsets + 2 * s;
                let range_offset = sub.u16(ro_pos)? as usize;
                if start > end {
                    return Err(malformed("cmap segment start exceeds end"));
                }
                for code in start..=end {
                    if code == 0xFFFF {
                        break;
                    }
                    let gid = if range_offset == 0 {
                        code.wrapping_add(delta)
                    } else {
                        let at = ro_pos + range_offset + 2 * usize::from(code - start);
                        match sub.u16(at)? {
                            0 => 0,
                            g => g.wrapping_add(delta),
                        }
                    };
                    insert(u32::from(code), gid);
                }
            }
        }
        6 => {
            let first = u32::from(sub.u16(6)?);
            let count = sub.u16(8)? as usize;
            for i in 0..count {
                insert(first + i as u32, sub.u16(10 + 2 * i)?);
            }
        }
        12 => {
            let groups = sub.u32(12)? as usize;
            for g in 0..groups {
                let base = 16 + 12 * g;
                let (start, end, gid0) = (sub.u32(base)?, sub.u32(base + 4)?, sub.u32(base + 8)?);
                if start > end || end > 0x10FFFF {
                    return Err(malformed("bad cmap group"));
                }
                for code in start..=end {
                    let gid = gid0 + (code - start);
                    insert(code, u16::try_from(gid).map_err(|_| malformed("glyph id overflow"))?);
                }
            }
        }
        _ => unreachable!("filtered above"),
    }
    Ok(map)
}

/// Exact re-expression of a quadratic Bézier as a cubic.
pub fn elevate_quadratic(q0: Point, q1: Point, q2: Point) -> CubicSegment {
    CubicSegment::new(q0, q0 + (q1 - q0) * (2.0 / 3.0), q2 + (q1 - q2) * (2.0 / 3.0), q2)
}

/// Turns one TrueType contour (on/off-curve point loop) into cubic segments
/// in font units, inserting implied on-curve midpoints between consecutive
/// off-curve points.
fn contour_segments(points: &[RawPoint], offset: Point) -> Vec<CubicSegment> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let pt = |i: usize| Point::new(points[i % n].x, points[i % n].y) + offset;
    let start_idx = points.iter().position(|p| p.on_curve);
    // Walk starts at an on-curve point; an all-off-curve loop starts at the
    // implied midpoint between the last and first points.
    let (start, first) = match start_idx {
        Some(i) => (pt(i), i + 1),
        None => (pt(n - 1).lerp(pt(0), 0.5), 0),
    };
    let mut segments = Vec::new();
    let mut cursor = start;
    let mut pending: Option<Point> = None;
    for k in 0..n {
        let i = first + k;
        let is_last = k + 1 == n;
        let p = pt(i);
        let on = points[i % n].on_curve;
        // the final point of the walk is the start point itself (for an
        // on-curve start) or the last off-curve point (midpoint start)
        let target = if is_last && start_idx.is_some() { start } else { p };
        match (on || (is_last && start_idx.is_some()), pending) {
            (true, None) => {
                segments.push(CubicSegment::line(cursor, target));
                cursor = target;
            }
            (true, Some(ctrl)) => {
                segments.push(elevate_quadratic(cursor, ctrl, target));
                cursor = target;
                pending = None;
            }
            (false, None) => pending = Some(p),
            (false, Some(ctrl)) => {
                let mid = ctrl.lerp(p, 0.5);
                segments.push(elevate_quadratic(cursor, ctrl, mid));
                cursor = mid;
                pending = Some(p);
            }
        }
    }
    if let Some(ctrl) = pending {
        segments.push(elevate_quadratic(cursor, ctrl, start));
    } else if cursor != start {
        segments.push(CubicSegment::line(cursor, start));
    }
    segments
}

/// Extracts `codepoint` as closed cubic contours at `em_size_px` pixels per
/// em, y axis pointing down (font-unit `y` maps to `(units_per_em - y) * s`).
pub fn extract_glyph(face: &FontFace, codepoint: char, em_size_px: f64) -> Result<GlyphOutline, FontError> {
    if !(em_size_px > 0.0 && em_size_px.is_finite()) {
        return Err(FontError::BadEmSize(em_size_px));
    }
    let gid = face.glyph_id(codepoint).ok_or(FontError::MissingGlyph(codepoint))?;
    let scale = em_size_px / f64::from(face.units_per_em);
    let upem = f64::from(face.units_per_em);
    let to_px = |p: Point| Point::new(p.x * scale, (upem - p.y) * scale);

    let mut unit_contours: Vec<Vec<CubicSegment>> = Vec::new();
    match &face.glyphs[gid as usize] {
        GlyphRecord::Empty => {}
        GlyphRecord::Simple(contours) => {
            for c in contours {
                unit_contours.push(contour_segments(c, Point::default()));
            }
        }
        GlyphRecord::Composite(components) => {
            for comp in components {
                if !comp.xy_values {
                    return Err(FontError::UnsupportedFont(format!(
                        "glyph {gid}: point-matched component placement"
                    )));
                }
                if comp.transformed {
                    return Err(FontError::UnsupportedFont(format!("glyph {gid}: scaled component")));
                }
                let offset = Point::new(f64::from(comp.dx), f64::from(comp.dy));
                match &face.glyphs[comp.glyph_id as usize] {
                    GlyphRecord::Empty => {}
                    GlyphRecord::Simple(contours) => {
                        for c in contours {
                            unit_contours.push(contour_segments(c, offset));
                        }
                    }
                    GlyphRecord::Composite(_) => {
                        return Err(FontError::UnsupportedFont(format!("glyph {gid}: nested composite")))
                    }
                }
            }
        }
    }

    let contours = unit_contours
        .into_iter()
        .filter(|segs| !segs.is_empty())
        .map(|segs| {
            Contour::new(
                segs.iter()
                    .map(|s| CubicSegment::new(to_px(s.p0), to_px(s.p1), to_px(s.p2), to_px(s.p3)))
                    .collect(),
            )
        })
        .collect();
    let advance_units = face.advance(gid).map(f64::from);
    Ok(GlyphOutline {
        contours,
        em_size_px,
        advance_px: advance_units.unwrap_or(0.0) * scale,
    })
}

/// Canonical winding: the largest contour gets positive area, and every
/// contour alternates orientation with its nesting depth (holes negative).
pub fn normalize_outline(outline: &GlyphOutline) -> Result<GlyphOutline, FontError> {
    if outline.contours.is_empty() {
        return Ok(outline.clone());
    }
    let polys: Vec<Vec<Point>> = outline
        .contours
        .iter()
        .map(|c| flatten_contour(&c.segments, ORIENTATION_SUBDIV))
        .collect();
    let areas: Vec<f64> = polys.iter().map(|p| signed_area(p)).collect();
    let scale = outline
        .control_bounds()
        .map(|(lo, hi)| (hi - lo).dot(hi - lo))
        .unwrap_or(0.0);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    if areas.iter().all(|a| a.abs() <= tol) {
        return Err(FontError::DegenerateOutline);
    }

    let contours = outline
        .contours
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let probe = polys[i][0];
            let depth = (0..polys.len())
                .filter(|&j| j != i && areas[j].abs() > areas[i].abs() && point_in_polygon(probe, &polys[j]))
                .count();
            let want = if depth % 2 == 0 {
                Orientation::PositiveArea
            } else {
                Orientation::NegativeArea
            };
            let have = Orientation::of_area(areas[i]);
            if areas[i].abs() > tol && have != want {
                c.reversed()
            } else {
                Contour {
                    segments: c.segments.clone(),
                    orientation: have,
                }
            }
        })
        .collect();
    Ok(GlyphOutline {
        contours,
        em_size_px: outline.em_size_px,
        advance_px: outline.advance_px,
    })
}
