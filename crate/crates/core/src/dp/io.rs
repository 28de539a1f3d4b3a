//! Table export: a plotting-friendly CSV and a compact binary snapshot.
//!
//! Snapshot layout, all little-endian:
//!
//! ```text
//! magic "HCDP" | u32 version | u32 cost kind | u32 n_x | u32 n_v | u32 n_u1
//! f64 dt, x_min, x_max, v_min, v_max, u1_max, v_gate
//! f64 target_half_width_x, target_half_width_v, out_of_bound_cost, target_cost
//! u64 iterations | f64 final_residual | u32 converged
//! f64 planes, each n_x * n_v values, one row per velocity level:
//!     J, feasible (0/1), terminal (0/1), u1, u2 (1/2)
//! ```

use std::io::{self, Read, Write};

use super::{GridSpec, PolicyTable, Solution, SolveReport, TerminationSpec, ValueTable};
use crate::model::{CostKind, Mode};
use crate::scalar::Scalar;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"HCDP";
pub const SNAPSHOT_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "i,j,x,v,feasible,J,u1,u2";

/// One line per cell, `i` fastest.
pub fn write_csv<T: Scalar, W: Write>(solution: &Solution<T>, mut out: W) -> io::Result<()> {
    let g = &solution.grid;
    writeln!(out, "{CSV_HEADER}")?;
    for j in 0..g.n_v {
        for i in 0..g.n_x {
            let s = g.state(i, j);
            let idx = g.index(i, j);
            let a = solution.policy.action(i, j);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                i,
                j,
                s.x.as_f64(),
                s.v.as_f64(),
                u8::from(solution.value.feasible[idx]),
                solution.value.values[idx].as_f64(),
                a.u1.as_f64(),
                a.u2.index()
            )?;
        }
    }
    Ok(())
}

pub fn write_snapshot<T: Scalar, W: Write>(solution: &Solution<T>, mut out: W) -> io::Result<()> {
    let g = &solution.grid;
    let t = &solution.termination;
    out.write_all(SNAPSHOT_MAGIC)?;
    for v in [SNAPSHOT_VERSION, solution.kind.code() as u32, g.n_x as u32, g.n_v as u32, g.n_u1 as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in [g.dt, g.x_min, g.x_max, g.v_min, g.v_max, g.u1_max, g.v_gate] {
        out.write_all(&v.as_f64().to_le_bytes())?;
    }
    for v in [t.target_half_width_x, t.target_half_width_v, t.out_of_bound_cost, t.target_cost] {
        out.write_all(&v.as_f64().to_le_bytes())?;
    }
    out.write_all(&(solution.report.iterations as u64).to_le_bytes())?;
    out.write_all(&solution.report.final_residual.to_le_bytes())?;
    out.write_all(&u32::from(solution.report.converged).to_le_bytes())?;

    let flag = |b: bool| if b { 1.0f64 } else { 0.0 };
    let planes: [Box<dyn Fn(usize) -> f64 + '_>; 5] = [
        Box::new(|k| solution.value.values[k].as_f64()),
        Box::new(|k| flag(solution.value.feasible[k])),
        Box::new(|k| flag(solution.value.terminal[k])),
        Box::new(|k| solution.policy.u1_star[k].as_f64()),
        Box::new(|k| solution.policy.u2_star[k].index() as f64),
    ];
    let mut buf = Vec::with_capacity(g.len() * 8);
    for plane in planes.iter() {
        buf.clear();
        for k in 0..g.len() {
            buf.extend_from_slice(&plane(k).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> io::Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> io::Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn plane(&mut self, len: usize) -> io::Result<Vec<f64>> {
        let mut raw = vec![0u8; len * 8];
        self.inner.read_exact(&mut raw)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn read_snapshot<T: Scalar, R: Read>(input: R) -> io::Result<Solution<T>> {
    let mut r = Reader { inner: input };
    let mut magic = [0u8; 4];
    r.inner.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(invalid("not a policy snapshot (bad magic)"));
    }
    let version = r.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(invalid(format!("unsupported snapshot version {version}")));
    }
    let kind = CostKind::from_code(r.u32()? as u8).ok_or_else(|| invalid("unknown cost kind"))?;
    let (n_x, n_v, n_u1) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let lit = |v: f64| T::lit(v);
    let grid = GridSpec {
        n_x,
        n_v,
        n_u1,
        dt: lit(r.f64()?),
        x_min: lit(r.f64()?),
        x_max: lit(r.f64()?),
        v_min: lit(r.f64()?),
        v_max: lit(r.f64()?),
        u1_max: lit(r.f64()?),
        v_gate: lit(r.f64()?),
    };
    grid.validate().map_err(|e| invalid(e.to_string()))?;
    let termination = TerminationSpec {
        target_half_width_x: lit(r.f64()?),
        target_half_width_v: lit(r.f64()?),
        out_of_bound_cost: lit(r.f64()?),
        target_cost: lit(r.f64()?),
    };
    let report = SolveReport {
        iterations: r.u64()? as usize,
        final_residual: r.f64()?,
        converged: r.u32()? != 0,
        wall_time: 0.0,
        history: Vec::new(),
    };
    let len = grid.len();
    let values = r.plane(len)?;
    let feasible = r.plane(len)?;
    let terminal = r.plane(len)?;
    let u1 = r.plane(len)?;
    let u2 = r.plane(len)?;
    let u2_star = u2
        .iter()
        .map(|m| Mode::from_index(*m as i64).map_err(|e| invalid(e.to_string())))
        .collect::<io::Result<Vec<_>>>()?;
    Ok(Solution {
        grid,
        termination,
        kind,
        value: ValueTable {
            n_x,
            n_v,
            values: values.into_iter().map(lit).collect(),
            feasible: feasible.iter().map(|f| *f != 0.0).collect(),
            terminal: terminal.iter().map(|f| *f != 0.0).collect(),
        },
        policy: PolicyTable { n_x, n_v, u1_star: u1.into_iter().map(lit).collect(), u2_star },
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{value_iteration, SolverOptions};
    use crate::model::{ActuatorParams, CostWeights};

    fn solve() -> Solution<f64> {
        let p = ActuatorParams::prototype();
        let g = GridSpec::new(&p, 15, 17, 5, 0.02).unwrap();
        let mut t = TerminationSpec::prototype();
        t.target_half_width_x = 0.025;
        t.target_half_width_v = 0.07;
        value_iteration(&p, &CostWeights::prototype_quadratic(), &g, &t, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn snapshot_round_trip() {
        let sol = solve();
        let mut bytes = Vec::new();
        write_snapshot(&sol, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"HCDP");
        assert_eq!(bytes.len(), 4 + 5 * 4 + 11 * 8 + 8 + 8 + 4 + 5 * 8 * 15 * 17);
        let back: Solution<f64> = read_snapshot(bytes.as_slice()).unwrap();
        assert_eq!(back.value, sol.value);
        assert_eq!(back.policy, sol.policy);
        assert_eq!(back.grid, sol.grid);
        assert_eq!(back.termination, sol.termination);
        assert_eq!(back.kind, sol.kind);
        assert_eq!(back.report.iterations, sol.report.iterations);
    }

    #[test]
    fn snapshot_rejects_garbage() {
        assert!(read_snapshot::<f64, _>(&b"NOPE0000"[..]).is_err());
        let sol = solve();
        let mut bytes = Vec::new();
        write_snapshot(&sol, &mut bytes).unwrap();
        bytes[4] = 9;
        assert!(read_snapshot::<f64, _>(bytes.as_slice()).is_err());
        let mut bytes = Vec::new();
        write_snapshot(&sol, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_snapshot::<f64, _>(bytes.as_slice()).is_err());
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let sol = solve();
        let mut out = Vec::new();
        write_csv(&sol, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 15 * 17);
        assert!(rows.iter().any(|r| r.split(',').nth(4) == Some("0")), "corners should be infeasible");
        assert!(rows.iter().all(|r| r.split(',').count() == 8));
    }
}
