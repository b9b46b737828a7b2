#![no_main]

use libfuzzer_sys::fuzz_target;
use nrulab::diagnostics::parse_grid;
use nrulab::training::{CellConfig, TrainConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let base = TrainConfig::copy(CellConfig::nru(8, 9, 1), 10, 1, 0);
    if let Ok(grid) = parse_grid(text, base) {
        // only enumerate grids small enough to be cheap
        if grid.num_heads.len() * grid.memory_size.len().max(1) * grid.hidden_size.len().max(1) <= 4096 {
            for p in grid.points() {
                let _ = grid.config_for(&p).cell.resolve(10, 30, None);
            }
        }
    }
});
