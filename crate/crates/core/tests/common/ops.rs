//! Every tape op with small input shapes.

use gzrd_core::tensor::{Graph, MhaParams, Var};

pub type Op = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> gzrd_core::Result<Var>>;

/// Every tape op with small shapes: (name, input shapes, scalar output, op).
pub fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, bool, Op)> {
    vec![
        (
            "linear",
            vec![vec![3, 4], vec![4, 5], vec![5]],
            false,
            Box::new(|g, v| g.linear(v[0], v[1], Some(v[2]))),
        ),
        (
            "linear_vec",
            vec![vec![4], vec![4, 2]],
            false,
            Box::new(|g, v| g.linear(v[0], v[1], None)),
        ),
        (
            "conv1d",
            vec![vec![3, 11], vec![4, 3, 5], vec![4]],
            false,
            Box::new(|g, v| g.conv1d(v[0], v[1], Some(v[2]), 2, 2)),
        ),
        (
            "conv2d",
            vec![vec![2, 7, 7], vec![3, 2, 3, 3], vec![3]],
            false,
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1)),
        ),
        (
            "add",
            vec![vec![3, 4], vec![3, 4]],
            false,
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        (
            "add_row",
            vec![vec![3, 4], vec![4]],
            false,
            Box::new(|g, v| g.add_row(v[0], v[1])),
        ),
        ("gelu", vec![vec![3, 5]], false, Box::new(|g, v| Ok(g.gelu(v[0])))),
        (
            "layer_norm",
            vec![vec![3, 6], vec![6], vec![6]],
            false,
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        ),
        (
            "attention",
            vec![vec![4, 6], vec![4, 6], vec![4, 6]],
            false,
            Box::new(|g, v| g.attention(v[0], v[1], v[2], 2)),
        ),
        (
            "multi_head_attention",
            vec![
                vec![3, 4],
                vec![4, 4],
                vec![4],
                vec![4, 4],
                vec![4],
                vec![4, 4],
                vec![4],
                vec![4, 4],
                vec![4],
            ],
            false,
            Box::new(|g, v| {
                let p = MhaParams {
                    wq: v[1],
                    bq: v[2],
                    wk: v[3],
                    bk: v[4],
                    wv: v[5],
                    bv: v[6],
                    wo: v[7],
                    bo: v[8],
                };
                g.multi_head_attention(v[0], 2, &p)
            }),
        ),
        (
            "concat_rows",
            vec![vec![1, 3], vec![2, 3], vec![4, 3]],
            false,
            Box::new(|g, v| g.concat_rows(v)),
        ),
        (
            "to_tokens_1d",
            vec![vec![3, 5]],
            false,
            Box::new(|g, v| g.to_tokens(v[0])),
        ),
        (
            "to_tokens_2d",
            vec![vec![3, 2, 4]],
            false,
            Box::new(|g, v| g.to_tokens(v[0])),
        ),
        ("row", vec![vec![4, 3]], false, Box::new(|g, v| g.row(v[0], 2))),
        (
            "softmax_cross_entropy",
            vec![vec![5]],
            true,
            Box::new(|g, v| g.softmax_cross_entropy(v[0], 3)),
        ),
    ]
}
