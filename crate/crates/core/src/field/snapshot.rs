//! Binary field snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..8    magic "PYMFIELD"
//! bytes 8..12   u32 format version (1)
//! bytes 12..20  u64 header length L
//! bytes 20..20+L  UTF-8 JSON header (SnapshotHeader)
//! then          f64 values, little-endian, count = sites * binom(4, degree) * dim
//! ```
//!
//! Values are ordered site-major with sites in lexicographic order of
//! `(i0, i1, i2, i3)` (i3 fastest), then form components by increasing
//! multi-index within the degree, then Lie-algebra basis components.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebra::forms::BINOM4;
use crate::algebra::lie::Algebra;
use crate::error::{Error, Result};
use crate::field::{GaugeField, LatticeForm};
use crate::lattice::{Domain, DomainKind};

pub const MAGIC: &[u8; 8] = b"PYMFIELD";
pub const VERSION: u32 = 1;
pub const COMPONENT_ORDER: &str = "site (i0,i1,i2,i3) lexicographic, form multi-index, lie component";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub domain: DomainKind,
    pub n: usize,
    pub h: f64,
    pub degree: usize,
    /// `su(N)` matrix size and inner-product normalization c.
    pub su_n: usize,
    pub c: f64,
    pub dim: usize,
    pub component_order: String,
    /// Free-form provenance, e.g. the config hash of the producing run.
    #[serde(default)]
    pub note: String,
}

pub fn encode(field: &GaugeField, note: &str) -> Result<Vec<u8>> {
    let dom = field.domain();
    let alg = field.algebra();
    let form = field.form();
    let header = SnapshotHeader {
        domain: dom.kind(),
        n: dom.n(),
        h: dom.h(),
        degree: form.degree(),
        su_n: alg.matrix_size(),
        c: alg.scale(),
        dim: alg.dim(),
        component_order: COMPONENT_ORDER.into(),
        note: note.into(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * form.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in form.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode(mut bytes: &[u8]) -> Result<(SnapshotHeader, GaugeField)> {
    if take(&mut bytes, 8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8, "header length")?.try_into().unwrap()) as usize;
    let header: SnapshotHeader =
        serde_json::from_slice(take(&mut bytes, len, "header")?).map_err(|e| Error::Format(e.to_string()))?;
    if header.degree != 1 {
        return Err(Error::Format(format!("gauge field snapshot must have degree 1, got {}", header.degree)));
    }
    let alg = Arc::new(Algebra::su_scaled(header.su_n, header.c)?);
    if alg.dim() != header.dim {
        return Err(Error::Format(format!("header dim {} does not match su({})", header.dim, header.su_n)));
    }
    let dom = Arc::new(Domain::from_kind(header.domain, header.h)?);
    if dom.n() != header.n {
        return Err(Error::Format(format!("header n = {} but the domain has {} sites per axis", header.n, dom.n())));
    }
    let count = dom.site_count() * BINOM4[header.degree] * header.dim;
    if bytes.len() != 8 * count {
        return Err(Error::Format(format!("expected {} data bytes, found {}", 8 * count, bytes.len())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let form = LatticeForm::from_data(&dom, 1, header.dim, data)?;
    Ok((header, GaugeField::new(&alg, form)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let alg = Arc::new(Algebra::su_scaled(2, 1.0).unwrap());
        let dom = Arc::new(Domain::ball(1.0, 0.25).unwrap());
        let a = GaugeField::from_fn(&alg, &dom, |_, x, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = (i as f64 + x[0] * 3.0 - x[3]).sin() / 3.0;
            }
        })
        .unwrap();
        let bytes = encode(&a, "test").unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let (h, b) = decode(&bytes).unwrap();
        assert_eq!(h.note, "test");
        assert_eq!(a.form().data(), b.form().data());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }
}
