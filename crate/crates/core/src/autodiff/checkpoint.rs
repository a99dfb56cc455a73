//! Plain-text parameter checkpoints.
//!
//! ```text
//! #cauliflow-params v1
//! <name> <rank> <dim0> ... <dimN-1>
//! <value> <value> ...
//! ```
//!
//! One header line plus one value line per parameter, in store order.
//! Values are written with Rust's shortest round-trip float formatting, so
//! save followed by load reproduces every bit.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{AutodiffError, ParamStore, Tensor};

pub const CHECKPOINT_HEADER: &str = "#cauliflow-params v1";

pub fn write_params<W: Write>(store: &ParamStore, mut out: W) -> Result<(), AutodiffError> {
    writeln!(out, "{CHECKPOINT_HEADER}")?;
    for (name, value) in store.iter() {
        let dims: Vec<String> = value.shape().iter().map(ToString::to_string).collect();
        write!(out, "{name} {}", value.rank())?;
        for d in &dims {
            write!(out, " {d}")?;
        }
        writeln!(out)?;
        let vals: Vec<String> = value.data().iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", vals.join(" "))?;
    }
    Ok(())
}

pub fn read_params<R: BufRead>(input: R) -> Result<ParamStore, AutodiffError> {
    let bad = |line: usize, msg: &str| AutodiffError::Checkpoint(format!("line {line}: {msg}"));
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == CHECKPOINT_HEADER => {}
        Some((_, Ok(h))) => return Err(bad(1, &format!("unexpected header {h:?}"))),
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(bad(1, "empty checkpoint")),
    }
    let mut store = ParamStore::new();
    while let Some((i, header)) = lines.next() {
        let header = header?;
        if header.trim().is_empty() {
            continue;
        }
        let mut fields = header.split_whitespace();
        let name = fields.next().ok_or_else(|| bad(i + 1, "missing name"))?.to_string();
        let rank: usize = fields
            .next()
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| bad(i + 1, "missing rank"))?;
        let shape: Vec<usize> = fields
            .map(|d| d.parse().map_err(|_| bad(i + 1, "bad dimension")))
            .collect::<Result<_, _>>()?;
        if shape.len() != rank {
            return Err(bad(i + 1, "rank does not match dimension count"));
        }
        let (j, values) = lines.next().ok_or_else(|| bad(i + 2, "missing values"))?;
        let values = values?;
        let data: Vec<f64> = values
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(j + 1, "bad float")))
            .collect::<Result<_, _>>()?;
        let tensor = Tensor::new(shape, data).map_err(|e| bad(j + 1, &e.to_string()))?;
        store.add(name, tensor)?;
    }
    Ok(store)
}

pub fn save_params(store: &ParamStore, path: &Path) -> Result<(), AutodiffError> {
    let mut buf = Vec::new();
    write_params(store, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamStore, AutodiffError> {
    let file = fs::File::open(path)?;
    read_params(BufReader::new(file))
}

/// Copies values from `loaded` into `store`, requiring identical names and shapes.
pub fn restore_into(store: &mut ParamStore, loaded: &ParamStore) -> Result<(), AutodiffError> {
    if store.len() != loaded.len() {
        return Err(AutodiffError::Checkpoint(format!(
            "checkpoint has {} params, model expects {}",
            loaded.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let src = loaded
            .id(&name)
            .ok_or_else(|| AutodiffError::Checkpoint(format!("checkpoint lacks {name}")))?;
        store.set(id, loaded.value(src).clone())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut store = ParamStore::new();
            let n = values.len();
            store.add("a.weight", Tensor::vector(values.clone())).unwrap();
            store.add("scalar", Tensor::scalar(values[0])).unwrap();
            store.add("m", Tensor::new(vec![1, n], values).unwrap()).unwrap();
            let mut buf = Vec::new();
            write_params(&store, &mut buf).unwrap();
            let back = read_params(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), 3);
            for (a, b) in store.iter().zip(back.iter()) {
                prop_assert_eq!(a.0, b.0);
                prop_assert_eq!(a.1.shape(), b.1.shape());
                let bits_a: Vec<u64> = a.1.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.1.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }

    #[test]
    fn rejects_wrong_header_and_rank() {
        assert!(read_params(&b"nope\n"[..]).is_err());
        assert!(read_params(&b"#cauliflow-params v1\nw 2 3\n1 2 3\n"[..]).is_err());
        assert!(read_params(&b"#cauliflow-params v1\nw 1 3\n1 2\n"[..]).is_err());
    }

    #[test]
    fn restore_checks_names() {
        let mut a = ParamStore::new();
        a.add("x", Tensor::vector(vec![1.0])).unwrap();
        let mut b = ParamStore::new();
        b.add("y", Tensor::vector(vec![2.0])).unwrap();
        assert!(restore_into(&mut a, &b).is_err());
        let mut c = ParamStore::new();
        c.add("x", Tensor::vector(vec![5.0])).unwrap();
        restore_into(&mut a, &c).unwrap();
        assert_eq!(a.value(a.id("x").unwrap()).data(), &[5.0]);
    }
}
