//! Text checkpoint of named tensors.
//!
//! ```text
//! coaccel-checkpoint 1
//! tensor stem.w 4 8 5 3 3
//! 3fb999999999999a bfe0000000000000 ...
//! end
//! ```
//!
//! Values are written as the hex of their IEEE-754 bit patterns, so a
//! save/load round trip is bit-exact (including signed zeros).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ParamStore, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &str = "coaccel-checkpoint";
const VERSION: u32 = 1;
const PER_LINE: usize = 8;

pub fn write_checkpoint(store: &ParamStore) -> Result<String, TensorError> {
    let mut out = format!("{CHECKPOINT_MAGIC} {VERSION}\n");
    for (name, t) in store.iter() {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(TensorError::Checkpoint(format!("bad tensor name {name:?}")));
        }
        write!(out, "tensor {name} {}", t.ndim()).expect("string write");
        for d in t.shape() {
            write!(out, " {d}").expect("string write");
        }
        out.push('\n');
        for chunk in t.data().chunks(PER_LINE) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    Ok(out)
}

pub fn read_checkpoint(text: &str) -> Result<ParamStore, TensorError> {
    let bad = |line: usize, msg: &str| TensorError::Checkpoint(format!("line {}: {msg}", line + 1));
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(0, "empty file"))?;
    let mut head = header.split_whitespace();
    if head.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad(0, "missing checkpoint header"));
    }
    match head.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(VERSION) => {}
        other => return Err(bad(0, &format!("unsupported version {other:?}"))),
    }
    let mut store = ParamStore::new();
    let mut pending: Option<(usize, String, Vec<usize>, Vec<f64>)> = None;
    let mut finished = false;
    for (no, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if finished {
            return Err(bad(no, "content after end"));
        }
        if line == "end" || line.starts_with("tensor ") {
            if let Some((at, name, shape, data)) = pending.take() {
                let t = Tensor::new(shape, data).map_err(|e| bad(at, &e.to_string()))?;
                store.add(name, t);
            }
            if line == "end" {
                finished = true;
                continue;
            }
            let mut parts = line.split_whitespace().skip(1);
            let name = parts.next().ok_or_else(|| bad(no, "missing name"))?.to_string();
            let ndim: usize = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(no, "missing rank"))?;
            let shape: Vec<usize> = parts
                .map(|v| v.parse().map_err(|_| bad(no, "bad dimension")))
                .collect::<Result<_, _>>()?;
            if shape.len() != ndim {
                return Err(bad(no, "rank does not match dimensions"));
            }
            pending = Some((no, name, shape, Vec::new()));
            continue;
        }
        let (_, _, _, data) = pending.as_mut().ok_or_else(|| bad(no, "values before tensor header"))?;
        for word in line.split_whitespace() {
            let bits = u64::from_str_radix(word, 16).map_err(|_| bad(no, "bad hex value"))?;
            data.push(f64::from_bits(bits));
        }
    }
    if !finished {
        return Err(TensorError::Checkpoint("missing end marker".into()));
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<(), TensorError> {
    let text = write_checkpoint(store)?;
    fs::write(path, text).map_err(|e| TensorError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, TensorError> {
    let text = fs::read_to_string(path).map_err(|e| TensorError::Checkpoint(format!("{}: {e}", path.display())))?;
    read_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..4, 0..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let mut state = seed;
            let data: Vec<f64> = (0..n)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f64::from_bits(state >> 2) // finite, arbitrary bit patterns
                })
                .collect();
            let mut store = ParamStore::new();
            store.add("a.w", Tensor::new(dims.clone(), data).unwrap());
            store.add("b", Tensor::vector(vec![-0.0, 1e-300, f64::MAX]));
            let back = read_checkpoint(&write_checkpoint(&store).unwrap()).unwrap();
            prop_assert_eq!(back.len(), 2);
            for ((n1, t1), (n2, t2)) in store.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }

    #[test]
    fn rejects_truncated_file() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![1.0, 2.0, 3.0]));
        let text = write_checkpoint(&store).unwrap();
        let cut = text.replace("end\n", "");
        assert!(read_checkpoint(&cut).is_err());
        assert!(read_checkpoint("nonsense 1\nend\n").is_err());
    }
}
