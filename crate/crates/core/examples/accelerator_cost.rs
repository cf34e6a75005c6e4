//! Analytical cost of one child network on hand-built accelerators: PE
//! scaling, a two-chunk pipeline and budget checks.
//!
//!     cargo run --release --example accelerator_cost

use coaccel::accel::{
    pipeline_cost, validate, AcceleratorConfig, BufferSplit, ChunkConfig, Interconnect, LayerOp, LoopOrder,
    ResourceBudget, Tiling, DEFAULT_BANDWIDTH, DEFAULT_CLOCK_HZ,
};
use coaccel::supernet::{NetDescription, OperatorKind};

fn chunk(rows: usize, cols: usize, interconnect: Interconnect) -> ChunkConfig {
    ChunkConfig {
        pe_rows: rows,
        pe_cols: cols,
        interconnect,
        buffer_bytes: 128 << 10,
        split: BufferSplit::new(0.4, 0.4, 0.2),
        tiling: Tiling { tc: 16, tk: 16, th: 8, tw: 8 },
        loop_order: LoopOrder::WeightReuse,
    }
}

fn main() -> coaccel::Result<()> {
    let ops = [OperatorKind::ConvK3, OperatorKind::DwsepK3, OperatorKind::Skip, OperatorKind::ConvK5];
    let child = NetDescription::new([5, 8, 8], 4, &ops, 8, 64);
    let layers = child.layer_descs();
    println!("child {ops:?}: {} MACs, {} parameters\n", child.total_macs, child.total_params);

    println!("{:<24} {:>10} {:>10}", "single chunk", "cycles", "FPS");
    for ic in [Interconnect::WeightStationary, Interconnect::OutputStationary, Interconnect::RowStationary] {
        for pe in [4, 8, 16] {
            let cfg = AcceleratorConfig {
                chunks: vec![chunk(pe, pe, ic)],
                assignment: vec![0; layers.len()],
                clock_hz: DEFAULT_CLOCK_HZ,
                bandwidth: DEFAULT_BANDWIDTH,
            };
            let r = pipeline_cost(&layers, &cfg)?;
            println!("{:<24} {:>10.0} {:>10.0}", format!("{pe}x{pe} {ic:?}"), r.bottleneck_cycles, r.fps);
        }
    }

    // Dense convolutions on one chunk, everything else on a smaller one.
    let assignment = layers.iter().map(|l| usize::from(l.op != LayerOp::Conv)).collect();
    let cfg = AcceleratorConfig {
        chunks: vec![chunk(16, 16, Interconnect::WeightStationary), chunk(8, 8, Interconnect::WeightStationary)],
        assignment,
        clock_hz: DEFAULT_CLOCK_HZ,
        bandwidth: DEFAULT_BANDWIDTH,
    };
    let r = pipeline_cost(&layers, &cfg)?;
    println!("\n{:<16} {:>6} {:>10} {:>10}", "layer", "chunk", "MACs", "cycles");
    for (i, l) in layers.iter().enumerate() {
        println!("{:<16} {:>6} {:>10} {:>10.0}", l.name, cfg.assignment[i], l.macs, r.layer_cycles[i]);
    }
    println!("chunk cycles {:?}; bottleneck chunk {}; {:.0} FPS", r.chunk_cycles, r.bottleneck, r.fps);

    let tight = ResourceBudget { pe_max: 256, sram_max: 192 << 10 };
    match validate(&cfg, &layers, &tight) {
        Ok(()) => println!("fits {tight:?}"),
        Err(vs) => vs.iter().for_each(|v| println!("violation: {v}")),
    }
    Ok(())
}
