//! Published sizes of external PQC schemes, embedded read-only.
//!
//! Each table is a CSV with columns `name,level,pk,sk,sig_or_ct,ss` (empty
//! `ss` for signatures). The SHA-256 of each file is pinned; a table whose
//! digest does not match is refused.

use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use super::{PqcError, SchemeInfo, SchemeKind};

pub const SIG_TABLE: &str = include_str!("../../fixtures/sig_schemes.csv");
pub const KEM_TABLE: &str = include_str!("../../fixtures/kem_schemes.csv");

pub const SIG_TABLE_SHA256: &str =
    "5711ce8dc8e058ce07523a89616db031a0a9c05559b72cd1e41b997128a772d2";
pub const KEM_TABLE_SHA256: &str =
    "31293b63e1c205a88e30ad8984e4fbdba03452a241a1bb341bebc1daf4e28fe9";

pub const HEADER: [&str; 6] = ["name", "level", "pk", "sk", "sig_or_ct", "ss"];

pub(crate) fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(serde::Deserialize)]
struct Row {
    name: String,
    level: u8,
    pk: usize,
    sk: usize,
    sig_or_ct: usize,
    ss: Option<usize>,
}

/// Parses a fixture table after checking its digest.
pub fn parse_table(
    text: &str,
    expected_sha256: &str,
    label: &'static str,
    kind: SchemeKind,
) -> Result<Vec<SchemeInfo>, PqcError> {
    if sha256_hex(text.as_bytes()) != expected_sha256 {
        return Err(PqcError::FixtureChecksum(label));
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| PqcError::Fixture(e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(PqcError::Fixture(format!("{label}: unexpected header")));
    }
    reader
        .deserialize::<Row>()
        .map(|row| {
            let row = row.map_err(|e| PqcError::Fixture(format!("{label}: {e}")))?;
            if (kind == SchemeKind::Kem) != row.ss.is_some() {
                return Err(PqcError::Fixture(format!(
                    "{label}: ss column for {}",
                    row.name
                )));
            }
            Ok(SchemeInfo {
                name: row.name,
                kind,
                nist_level: row.level,
                pk_size: row.pk,
                sk_size: row.sk,
                sig_or_ct_size: row.sig_or_ct,
                ss_size: row.ss,
            })
        })
        .collect()
}

fn tables() -> &'static (Vec<SchemeInfo>, Vec<SchemeInfo>) {
    static TABLES: OnceLock<(Vec<SchemeInfo>, Vec<SchemeInfo>)> = OnceLock::new();
    TABLES.get_or_init(|| {
        let sig = parse_table(
            SIG_TABLE,
            SIG_TABLE_SHA256,
            "sig_schemes.csv",
            SchemeKind::Signature,
        )
        .expect("embedded signature table");
        let kem = parse_table(
            KEM_TABLE,
            KEM_TABLE_SHA256,
            "kem_schemes.csv",
            SchemeKind::Kem,
        )
        .expect("embedded KEM table");
        (sig, kem)
    })
}

pub fn signature_schemes() -> &'static [SchemeInfo] {
    &tables().0
}

pub fn kem_schemes() -> &'static [SchemeInfo] {
    &tables().1
}

pub fn lookup(name: &str) -> Option<SchemeInfo> {
    signature_schemes()
        .iter()
        .chain(kem_schemes())
        .find(|s| s.name == name)
        .cloned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_load_with_expected_row_counts() {
        assert_eq!(signature_schemes().len(), 44);
        assert_eq!(kem_schemes().len(), 29);
    }

    #[test]
    fn published_sizes() {
        let d = lookup("Dilithium2").unwrap();
        assert_eq!(
            (d.nist_level, d.pk_size, d.sk_size, d.sig_or_ct_size),
            (2, 1312, 2528, 2420)
        );
        assert_eq!(d.ss_size, None);
        let k = lookup("Kyber512").unwrap();
        assert_eq!(
            (
                k.nist_level,
                k.pk_size,
                k.sk_size,
                k.sig_or_ct_size,
                k.ss_size
            ),
            (1, 800, 1632, 768, Some(32))
        );
        let f = lookup("Falcon-512").unwrap();
        assert_eq!((f.pk_size, f.sk_size, f.sig_or_ct_size), (897, 1281, 752));
        let m = lookup("Classic-McEliece-8192128").unwrap();
        assert_eq!(m.pk_size, 1357824);
        let frodo = lookup("FrodoKEM-640-AES").unwrap();
        assert_eq!(frodo.ss_size, Some(16));
    }

    #[test]
    fn tampered_table_is_refused() {
        let edited = SIG_TABLE.replace("1312", "1313");
        assert_eq!(
            parse_table(&edited, SIG_TABLE_SHA256, "sig", SchemeKind::Signature),
            Err(PqcError::FixtureChecksum("sig"))
        );
    }
}
