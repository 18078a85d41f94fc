//! Published reference values for the real-data system. They are shown next
//! to synthetic results for scale only; nothing here is reproduced.

pub const LABEL: &str = "published, not reproduced";

/// (model, TTS, caption quality score)
pub const OVERALL: [(&str, f64, f64); 5] = [
    ("GLM-4v-9B", 29.36, 78.19),
    ("Gemma3-27B", 10.74, 12.00),
    ("Qwen2.5-VL-3B", 38.07, 84.63),
    ("Qwen2.5-VL-7B", 45.25, 85.70),
    ("RSRS-trained 3B", 51.06, 86.20),
];

/// (training strategy, [FL, FM, FH, BL, BM, BH]) in percent.
pub const CELLS: [(&str, [f64; 6]); 4] = [
    ("baseline", [57.47, 8.88, 0.03, 24.52, 1.53, 0.01]),
    ("+SFT", [68.21, 15.71, 0.04, 24.15, 2.01, 0.0]),
    ("+SFT+GRPO", [65.66, 14.39, 0.02, 37.97, 2.86, 0.02]),
    ("+SFT+RSRS", [66.59, 17.18, 0.09, 39.69, 3.87, 0.03]),
];

/// (training strategy, average predicted toy count, precision in percent)
pub const PRECISION: [(&str, f64, f64); 4] = [
    ("baseline", 1.45, 64.15),
    ("+SFT", 1.66, 69.59),
    ("+SFT+GRPO", 1.84, 64.43),
    ("+SFT+RSRS", 2.08, 56.43),
];

/// Aggregate TTS along the training ablation.
pub const ABLATION_TTS: [(&str, f64); 3] = [("+SFT", 42.42), ("+SFT+GRPO", 49.61), ("+SFT+RSRS", 51.07)];

/// Rank correlation of the reward with human rankings: (tau, rho).
pub const RANK_CORRELATION: (f64, f64) = (0.67, 0.72);

pub fn render() -> String {
    let mut s = format!("reference values ({LABEL})\n");
    s.push_str(&format!("{:<18} {:>8} {:>8}\n", "model", "TTS", "Score"));
    for (m, t, q) in OVERALL {
        s.push_str(&format!("{m:<18} {t:>8.2} {q:>8.2}\n"));
    }
    s.push_str(&format!(
        "{:<18} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
        "strategy", "FL", "FM", "FH", "BL", "BM", "BH"
    ));
    for (m, c) in CELLS {
        s.push_str(&format!(
            "{m:<18} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2}\n",
            c[0], c[1], c[2], c[3], c[4], c[5]
        ));
    }
    s.push_str(&format!("{:<18} {:>8} {:>10}\n", "strategy", "count", "precision"));
    for (m, c, p) in PRECISION {
        s.push_str(&format!("{m:<18} {c:>8.2} {p:>10.2}\n"));
    }
    s
}

pub fn to_json() -> serde_json::Value {
    serde_json::json!({
        "label": LABEL,
        "overall": OVERALL.iter().map(|(m, t, q)| serde_json::json!({"model": m, "tts": t, "score": q})).collect::<Vec<_>>(),
        "cells": CELLS.iter().map(|(m, c)| serde_json::json!({
            "strategy": m, "fl": c[0], "fm": c[1], "fh": c[2], "bl": c[3], "bm": c[4], "bh": c[5]
        })).collect::<Vec<_>>(),
        "precision": PRECISION.iter().map(|(m, c, p)| serde_json::json!({"strategy": m, "avg_count": c, "precision": p})).collect::<Vec<_>>(),
        "ablation_tts": ABLATION_TTS.iter().map(|(m, t)| serde_json::json!({"strategy": m, "tts": t})).collect::<Vec<_>>(),
        "rank_correlation": {"tau": RANK_CORRELATION.0, "rho": RANK_CORRELATION.1},
    })
}
