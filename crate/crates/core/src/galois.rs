//! Arithmetic over GF(2^q) for q ∈ {1, 4, 8}.
//!
//! Elements are stored in the low `q` bits of a `u8`. Addition is XOR; multiplication
//! and inversion go through exp/log tables built once per field and shared for the
//! lifetime of the process. Payload bytes are treated as packed field symbols: one
//! symbol per byte at q = 8, two nibbles per byte at q = 4, eight bits per byte at
//! q = 1. [`GaloisField::axpy`] handles the packing so callers always work in bytes.

use std::sync::OnceLock;

use thiserror::Error;

/// One field element. Only the low `q` bits are meaningful.
pub type FieldElement = u8;

/// Reduction polynomial for GF(2^8): x^8 + x^4 + x^3 + x^2 + 1.
pub const POLY_GF256: u16 = 0x11D;
/// Reduction polynomial for GF(2^4): x^4 + x + 1.
pub const POLY_GF16: u16 = 0x13;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("unsupported field size 2^{0}; expected q in {{1, 4, 8}}")]
    UnsupportedSize(u8),
    #[error("element {value:#04x} is outside GF(2^{q})")]
    OutOfRange { value: u8, q: u8 },
}

/// Lookup tables for one GF(2^q).
pub struct GaloisField {
    q: u8,
    order: usize,
    exp: Vec<u8>,
    log: Vec<u8>,
    /// `byte_mul[a * 256 + b]` scales every packed symbol of byte `b` by `a`.
    byte_mul: Vec<u8>,
}

impl std::fmt::Debug for GaloisField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GF(2^{})", self.q)
    }
}

static GF2: OnceLock<GaloisField> = OnceLock::new();
static GF16: OnceLock<GaloisField> = OnceLock::new();
static GF256: OnceLock<GaloisField> = OnceLock::new();

impl GaloisField {
    /// Shared instance for GF(2^q).
    pub fn get(q: u8) -> Result<&'static GaloisField, FieldError> {
        match q {
            1 => Ok(GF2.get_or_init(|| GaloisField::build(1, 0b11))),
            4 => Ok(GF16.get_or_init(|| GaloisField::build(4, POLY_GF16))),
            8 => Ok(GF256.get_or_init(|| GaloisField::build(8, POLY_GF256))),
            other => Err(FieldError::UnsupportedSize(other)),
        }
    }

    pub fn gf256() -> &'static GaloisField {
        GaloisField::get(8).expect("q = 8 is supported")
    }

    fn build(q: u8, poly: u16) -> GaloisField {
        let order = 1usize << q;
        let group = order - 1;
        let mut exp = vec![0u8; 2 * group.max(1)];
        let mut log = vec![0u8; order];
        if q == 1 {
            exp[0] = 1;
            exp[1] = 1;
        } else {
            // 2 (the polynomial x) is primitive for both reduction polynomials.
            let mut x: u16 = 1;
            for i in 0..group {
                exp[i] = x as u8;
                exp[i + group] = x as u8;
                log[x as usize] = i as u8;
                x <<= 1;
                if x & (1 << q) != 0 {
                    x ^= poly;
                }
            }
        }
        let mut field = GaloisField {
            q,
            order,
            exp,
            log,
            byte_mul: Vec::new(),
        };
        let mut byte_mul = vec![0u8; order * 256];
        for a in 0..order {
            for b in 0..256usize {
                byte_mul[a * 256 + b] = field.scale_packed(a as u8, b as u8);
            }
        }
        field.byte_mul = byte_mul;
        field
    }

    fn scale_packed(&self, a: u8, byte: u8) -> u8 {
        match self.q {
            8 => self.mul(a, byte),
            4 => (self.mul(a, byte >> 4) << 4) | self.mul(a, byte & 0x0F),
            _ => {
                if a & 1 == 1 {
                    byte
                } else {
                    0
                }
            }
        }
    }

    /// Field size exponent q.
    pub fn q(&self) -> u8 {
        self.q
    }

    /// Number of elements, 2^q.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Mask selecting the meaningful bits of an element.
    pub fn mask(&self) -> u8 {
        (self.order - 1) as u8
    }

    pub fn check(&self, value: u8) -> Result<FieldElement, FieldError> {
        if (value as usize) < self.order {
            Ok(value)
        } else {
            Err(FieldError::OutOfRange { value, q: self.q })
        }
    }

    #[inline]
    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        a ^ b
    }

    #[inline]
    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        if a == 0 || b == 0 {
            return 0;
        }
        if self.q == 1 {
            return 1;
        }
        let la = self.log[a as usize] as usize;
        let lb = self.log[b as usize] as usize;
        self.exp[la + lb]
    }

    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, FieldError> {
        if a == 0 {
            return Err(FieldError::ZeroInverse);
        }
        if self.q == 1 {
            return Ok(1);
        }
        let group = self.order - 1;
        let la = self.log[a as usize] as usize;
        Ok(self.exp[(group - la) % group])
    }

    /// `y ← y + a·x` over packed payload bytes (or coefficient symbols).
    ///
    /// Panics if the slices differ in length; callers align vectors first.
    #[inline]
    pub fn axpy(&self, y: &mut [u8], a: FieldElement, x: &[u8]) {
        assert_eq!(y.len(), x.len(), "axpy length mismatch");
        match a {
            0 => {}
            1 => y.iter_mut().zip(x).for_each(|(y, x)| *y ^= *x),
            _ => {
                let row = &self.byte_mul[a as usize * 256..a as usize * 256 + 256];
                y.iter_mut().zip(x).for_each(|(y, x)| *y ^= row[*x as usize]);
            }
        }
    }

    /// `y ← a·y` in place.
    #[inline]
    pub fn scale(&self, y: &mut [u8], a: FieldElement) {
        if a == 1 {
            return;
        }
        let row = &self.byte_mul[a as usize * 256..a as usize * 256 + 256];
        y.iter_mut().for_each(|y| *y = row[*y as usize]);
    }
}

/// Coefficient vector anchored at the packet index of its first entry.
///
/// Entry `i` multiplies information packet `origin + i`. An uncoded packet is the
/// one-entry vector `[1]` anchored at its own index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoeffVector {
    origin: u64,
    coeffs: Vec<FieldElement>,
}

impl CoeffVector {
    pub fn new(origin: u64, coeffs: Vec<FieldElement>) -> CoeffVector {
        assert!(!coeffs.is_empty(), "coefficient vector must be non-empty");
        CoeffVector { origin, coeffs }
    }

    pub fn unit(index: u64) -> CoeffVector {
        CoeffVector {
            origin: index,
            coeffs: vec![1],
        }
    }

    pub fn origin(&self) -> u64 {
        self.origin
    }

    /// Index one past the last covered packet.
    pub fn end(&self) -> u64 {
        self.origin + self.coeffs.len() as u64
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[FieldElement] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [FieldElement] {
        &mut self.coeffs
    }

    /// Coefficient for packet `index`; zero outside the covered range.
    pub fn get(&self, index: u64) -> FieldElement {
        if index < self.origin || index >= self.end() {
            0
        } else {
            self.coeffs[(index - self.origin) as usize]
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    /// True when exactly one coefficient is non-zero and it equals one.
    pub fn is_unit(&self) -> bool {
        let mut nonzero = self.coeffs.iter().filter(|&&c| c != 0);
        matches!((nonzero.next(), nonzero.next()), (Some(1), None))
    }

    /// Grows the covered range (zero-filled) so it includes `[origin, end)`.
    pub fn widen(&mut self, origin: u64, end: u64) {
        let new_origin = origin.min(self.origin);
        let new_end = end.max(self.end());
        if new_origin == self.origin && new_end == self.end() {
            return;
        }
        let mut coeffs = vec![0; (new_end - new_origin) as usize];
        let start = (self.origin - new_origin) as usize;
        coeffs[start..start + self.coeffs.len()].copy_from_slice(&self.coeffs);
        self.origin = new_origin;
        self.coeffs = coeffs;
    }
}

/// A coefficient vector travelling with the payload it describes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedSymbols {
    pub coeffs: CoeffVector,
    pub payload: Vec<u8>,
}

/// `y ← y + a·x` over both coefficients and payload.
///
/// The vectors must already share a common origin and width.
pub fn vec_axpy(
    field: &GaloisField,
    y: &mut CodedSymbols,
    a: FieldElement,
    x: &CodedSymbols,
) -> Result<(), crate::coding::CodingError> {
    if y.coeffs.origin() != x.coeffs.origin()
        || y.coeffs.len() != x.coeffs.len()
        || y.payload.len() != x.payload.len()
    {
        return Err(crate::coding::CodingError::Misaligned {
            left: (y.coeffs.origin(), y.coeffs.len()),
            right: (x.coeffs.origin(), x.coeffs.len()),
        });
    }
    field.axpy(y.coeffs.coeffs_mut(), a, x.coeffs.coeffs());
    field.axpy(&mut y.payload, a, &x.payload);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Shift-and-add multiply with reduction, independent of the tables.
    fn clmul_reduce(a: u8, b: u8, q: u8, poly: u16) -> u8 {
        let mut acc: u32 = 0;
        for bit in 0..q {
            if b >> bit & 1 == 1 {
                acc ^= (a as u32) << bit;
            }
        }
        for bit in (q..2 * q).rev() {
            if acc >> bit & 1 == 1 {
                acc ^= (poly as u32) << (bit - q);
            }
        }
        acc as u8
    }

    #[test]
    fn add_examples() {
        let f = GaloisField::gf256();
        assert_eq!(f.add(0x00, 0x5A), 0x5A);
        assert_eq!(f.add(0x5A, 0x5A), 0x00);
        assert_eq!(f.add(0x53, 0xCA), 0x99);
    }

    #[test]
    fn mul_examples() {
        let f = GaloisField::gf256();
        assert_eq!(f.mul(0x01, 0x7F), 0x7F);
        assert_eq!(f.mul(0x00, 0x7F), 0x00);
        assert_eq!(f.mul(0x02, 0x80), 0x1D);
        assert_eq!(clmul_reduce(0x02, 0x80, 8, POLY_GF256), 0x1D);
    }

    #[test]
    fn inv_examples() {
        let f = GaloisField::gf256();
        assert_eq!(f.inv(0x01), Ok(0x01));
        assert_eq!(f.inv(0x02), Ok(0x8E));
        assert_eq!(f.inv(0x00), Err(FieldError::ZeroInverse));
        let brute = (1..=255u8).find(|&b| clmul_reduce(0x02, b, 8, POLY_GF256) == 1);
        assert_eq!(brute, Some(0x8E));
    }

    #[test]
    fn small_fields_match_oracle() {
        let gf16 = GaloisField::get(4).unwrap();
        for a in 0..16u8 {
            for b in 0..16u8 {
                assert_eq!(gf16.mul(a, b), clmul_reduce(a, b, 4, POLY_GF16));
            }
            if a != 0 {
                assert_eq!(gf16.mul(a, gf16.inv(a).unwrap()), 1);
            }
        }
        let gf2 = GaloisField::get(1).unwrap();
        assert_eq!(gf2.mul(1, 1), 1);
        assert_eq!(gf2.mul(1, 0), 0);
        assert_eq!(gf2.inv(1), Ok(1));
    }

    #[test]
    fn unsupported_size() {
        assert_eq!(
            GaloisField::get(3).unwrap_err(),
            FieldError::UnsupportedSize(3)
        );
        assert!(GaloisField::gf256().check(0xFF).is_ok());
        assert!(GaloisField::get(4).unwrap().check(0x10).is_err());
    }

    #[test]
    fn packed_nibble_scaling() {
        let gf16 = GaloisField::get(4).unwrap();
        let mut y = vec![0u8];
        gf16.axpy(&mut y, 0x3, &[0x52]);
        let expect = (clmul_reduce(3, 5, 4, POLY_GF16) << 4) | clmul_reduce(3, 2, 4, POLY_GF16);
        assert_eq!(y[0], expect);
    }

    #[test]
    fn vec_axpy_examples() {
        let f = GaloisField::gf256();
        let x = CodedSymbols {
            coeffs: CoeffVector::new(1, vec![0x80, 0x01]),
            payload: vec![0x80, 0x11],
        };
        let y0 = CodedSymbols {
            coeffs: CoeffVector::new(1, vec![0x53, 0x00]),
            payload: vec![0x53, 0x22],
        };

        let mut y = y0.clone();
        vec_axpy(f, &mut y, 0, &x).unwrap();
        assert_eq!(y, y0);

        let mut y = y0.clone();
        let copy = y.clone();
        vec_axpy(f, &mut y, 1, &copy).unwrap();
        assert!(y.coeffs.is_zero());
        assert!(y.payload.iter().all(|&b| b == 0));

        let mut y = y0.clone();
        vec_axpy(f, &mut y, 0x02, &x).unwrap();
        assert_eq!(y.coeffs.coeffs()[0], 0x4E);
        assert_eq!(y.payload[0], 0x4E);

        let short = CodedSymbols {
            coeffs: CoeffVector::new(2, vec![1]),
            payload: vec![0, 0],
        };
        assert!(vec_axpy(f, &mut y, 1, &short).is_err());
    }

    #[test]
    fn coeff_vector_helpers() {
        let mut v = CoeffVector::unit(5);
        assert!(v.is_unit());
        v.widen(3, 7);
        assert_eq!(v.origin(), 3);
        assert_eq!(v.coeffs(), &[0, 0, 1, 0]);
        assert_eq!(v.get(5), 1);
        assert_eq!(v.get(9), 0);
        assert!(v.is_unit());
        assert!(!CoeffVector::new(1, vec![2]).is_unit());
    }
}
