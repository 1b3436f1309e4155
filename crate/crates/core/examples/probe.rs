use relaxrk::ark::{integrate, System};
use relaxrk::dg::{BurgersSystem, DgGrid, FluxKind};
use relaxrk::mesh::Mesh1D;
use relaxrk::relax::{Mode, QuadraticEntropy};
use relaxrk::tableaux::{ark2, ark3, rk4, ButcherTableau, ImexPair, Scheme, TableauKind};

fn pair_of(name: &str, order: usize, ae: Vec<Vec<f64>>, ai: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<f64>) -> ImexPair {
    ImexPair {
        name: name.to_string(),
        order,
        explicit_part: ButcherTableau {
            name: format!("{name}_explicit"),
            kind: TableauKind::Explicit,
            order,
            a: ae,
            b: b.clone(),
            c: c.clone(),
            source: String::new(),
        },
        implicit_part: ButcherTableau {
            name: format!("{name}_implicit"),
            kind: TableauKind::DiagonallyImplicit,
            order,
            a: ai,
            b,
            c,
            source: String::new(),
        },
    }
}

fn ars232() -> ImexPair {
    let g = 1.0 - 1.0 / std::f64::consts::SQRT_2;
    let d = -2.0 * std::f64::consts::SQRT_2 / 3.0;
    pair_of(
        "ars232",
        2,
        vec![vec![0.0, 0.0, 0.0], vec![g, 0.0, 0.0], vec![d, 1.0 - d, 0.0]],
        vec![vec![0.0, 0.0, 0.0], vec![0.0, g, 0.0], vec![0.0, 1.0 - g, g]],
        vec![0.0, 1.0 - g, g],
        vec![0.0, g, 1.0],
    )
}

fn ars343() -> ImexPair {
    let g = 0.435866521508459_f64;
    let b2 = -1.5 * g * g + 4.0 * g - 0.25;
    let b3 = 1.5 * g * g - 5.0 * g + 1.25;
    let a31 = 0.3212788860286278;
    let a32 = 0.3966543747256017;
    let a41 = -0.105858296;
    let a42 = 0.5529291479;
    let a43 = 0.5529291479;
    pair_of(
        "ars343",
        3,
        vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![g, 0.0, 0.0, 0.0],
            vec![a31, a32, 0.0, 0.0],
            vec![a41, a42, a43, 0.0],
        ],
        vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.0, g, 0.0, 0.0],
            vec![0.0, (1.0 - g) / 2.0, g, 0.0],
            vec![0.0, b2, b3, g],
        ],
        vec![0.0, b2, b3, g],
        vec![0.0, g, (1.0 + g) / 2.0, 1.0],
    )
}

fn pr222() -> ImexPair {
    let g = 1.0 - 1.0 / std::f64::consts::SQRT_2;
    pair_of(
        "pr222",
        2,
        vec![vec![0.0, 0.0], vec![1.0, 0.0]],
        vec![vec![g, 0.0], vec![1.0 - 2.0 * g, g]],
        vec![0.5, 0.5],
        vec![0.0, 1.0],
    )
}

fn gkc_swapped() -> ImexPair {
    let mut p = ark2();
    let s2 = std::f64::consts::SQRT_2;
    p.explicit_part.a[2] = vec![(3.0 + 2.0 * s2) / 6.0, (3.0 - 2.0 * s2) / 6.0, 0.0];
    p.name = "gkc_swapped".into();
    p
}

fn grid100() -> DgGrid {
    DgGrid::new(Mesh1D::uniform(-1.0, 1.0, 100), 3)
}

fn rel_err(grid: &DgGrid, q: &[f64], qr: &[f64]) -> f64 {
    let d: Vec<f64> = q.iter().zip(qr).map(|(a, b)| a - b).collect();
    (grid.inner(&d, &d) / grid.inner(qr, qr)).sqrt()
}

fn reference(grid: &DgGrid, flux: FluxKind, t_end: f64) -> Vec<f64> {
    let q0 = grid.project(&|x: f64| (-10.0 * x * x).exp());
    let mut sys = BurgersSystem::new(grid.clone(), flux);
    let ent = QuadraticEntropy { weights: None };
    let s = integrate(
        &mut sys,
        &Scheme::Explicit(rk4()),
        &ent,
        Mode::Standard,
        &q0,
        t_end,
        5e-6,
        None,
        None,
    )
    .unwrap();
    s.q
}

/// Plain IMEX run, gamma = 1, with a choice of linearization refresh policy.
///   0: refresh at step start only (current convention)
///   1: refresh before each implicit solve at the previous stage state
///   2: refresh before each implicit solve at the explicit predictor r
fn run_imex(grid: &DgGrid, pair: &ImexPair, flux: FluxKind, dt: f64, t_end: f64, policy: u8) -> Vec<f64> {
    let mut sys = BurgersSystem::new(grid.clone(), flux);
    let mut q = grid.project(&|x: f64| (-10.0 * x * x).exp());
    let n = q.len();
    let ex = &pair.explicit_part;
    let im = &pair.implicit_part;
    let s = ex.s();
    let steps = (t_end / dt).round() as usize;
    for _ in 0..steps {
        sys.refresh(&q);
        let mut ns: Vec<Vec<f64>> = Vec::with_capacity(s);
        let mut gs: Vec<Vec<f64>> = Vec::with_capacity(s);
        let mut stages: Vec<Vec<f64>> = Vec::with_capacity(s);
        let mut r = vec![0.0; n];
        let mut full = vec![0.0; n];
        for i in 0..s {
            r.copy_from_slice(&q);
            for j in 0..i {
                let ae = ex.a[i][j];
                if ae != 0.0 {
                    for p in 0..n {
                        r[p] += dt * ae * ns[j][p];
                    }
                }
                let ai = im.a[i][j];
                if ai != 0.0 {
                    for p in 0..n {
                        r[p] += dt * ai * gs[j][p];
                    }
                }
            }
            let aii = im.a[i][i];
            if i > 0 {
                match policy {
                    1 => sys.refresh(&stages[i - 1]),
                    2 => sys.refresh(&r),
                    _ => {}
                }
            }
            let stage = if aii == 0.0 { r.clone() } else { sys.solve_shifted(dt * aii, &r).unwrap() };
            let mut g = vec![0.0; n];
            sys.apply_l(&stage, &mut g);
            sys.rhs(&stage, &mut full);
            let nvec: Vec<f64> = full.iter().zip(&g).map(|(f, gg)| f - gg).collect();
            ns.push(nvec);
            gs.push(g);
            stages.push(stage);
        }
        for i in 0..s {
            let (be, bi) = (ex.b[i], im.b[i]);
            for p in 0..n {
                q[p] += dt * (be * ns[i][p] + bi * gs[i][p]);
            }
        }
    }
    q
}

fn ark2_with_a32(a32: f64) -> ImexPair {
    let mut p = ark2();
    p.explicit_part.a[2] = vec![1.0 - a32, a32, 0.0];
    p
}

/// IDT run: complete with gamma but advance t by the full dt.
fn run_idt(grid: &DgGrid, pair: &ImexPair, flux: FluxKind, dt: f64, t_end: f64) -> Vec<f64> {
    let mut sys = BurgersSystem::new(grid.clone(), flux);
    let mut q = grid.project(&|x: f64| (-10.0 * x * x).exp());
    let n = q.len();
    let ex = &pair.explicit_part;
    let im = &pair.implicit_part;
    let s = ex.s();
    let steps = (t_end / dt).round() as usize;
    for _ in 0..steps {
        sys.refresh(&q);
        let mut ns: Vec<Vec<f64>> = Vec::with_capacity(s);
        let mut gs: Vec<Vec<f64>> = Vec::with_capacity(s);
        let mut stages: Vec<Vec<f64>> = Vec::with_capacity(s);
        let mut r = vec![0.0; n];
        let mut full = vec![0.0; n];
        for i in 0..s {
            r.copy_from_slice(&q);
            for j in 0..i {
                let ae = ex.a[i][j];
                if ae != 0.0 {
                    for p in 0..n {
                        r[p] += dt * ae * ns[j][p];
                    }
                }
                let ai = im.a[i][j];
                if ai != 0.0 {
                    for p in 0..n {
                        r[p] += dt * ai * gs[j][p];
                    }
                }
            }
            let aii = im.a[i][i];
            let stage = if aii == 0.0 { r.clone() } else { sys.solve_shifted(dt * aii, &r).unwrap() };
            let mut g = vec![0.0; n];
            sys.apply_l(&stage, &mut g);
            sys.rhs(&stage, &mut full);
            let nvec: Vec<f64> = full.iter().zip(&g).map(|(f, gg)| f - gg).collect();
            ns.push(nvec);
            gs.push(g);
            stages.push(stage);
        }
        let mut dq = vec![0.0; n];
        let mut snum = 0.0;
        for i in 0..s {
            let (be, bi) = (ex.b[i], im.b[i]);
            let d: Vec<f64> = stages[i].iter().zip(&q).map(|(a, b)| a - b).collect();
            let ri: Vec<f64> = ns[i].iter().zip(&gs[i]).map(|(a, b)| be * a + bi * b).collect();
            snum += dt * grid.inner(&ri, &d);
            for p in 0..n {
                dq[p] += dt * (be * ns[i][p] + bi * gs[i][p]);
            }
        }
        let gamma = 2.0 * snum / grid.inner(&dq, &dq);
        for p in 0..n {
            q[p] += gamma * dq[p];
        }
    }
    q
}

/// Stiffly accurate 3-stage pair: c = [0, c2, 1], implicit ESDIRK diag gamma,
/// b = b~ forced by order 2 + stiff accuracy, explicit a32 free.
fn family(g: f64, c2: f64, a32: f64) -> ImexPair {
    let b2 = (0.5 - g) / c2;
    let b1 = 1.0 - g - b2;
    let b = vec![b1, b2, g];
    pair_of(
        "fam",
        2,
        vec![vec![0.0; 3], vec![c2, 0.0, 0.0], vec![1.0 - a32, a32, 0.0]],
        vec![vec![0.0; 3], vec![c2 - g, g, 0.0], vec![b1, b2, g]],
        b,
        vec![0.0, c2, 1.0],
    )
}

fn main() {
    let dt = 1.25e-3;
    let grid = grid100();
    println!("-- t_end scan, K=100 deg3 EC, dt=1.25e-3 --");
    println!("-- paper anchors: ARK2 1.60e-5, IDT-ARK2 1.30e-4, ARK3 4.76e-7 --");
    for t_end in [0.2, 0.25, 0.3, 0.325, 0.35] {
        let qr = reference(&grid, FluxKind::EntropyConserving, t_end);
        let q2 = run_imex(&grid, &ark2(), FluxKind::EntropyConserving, dt, t_end, 0);
        let e2 = rel_err(&grid, &q2, &qr);
        let qi = run_idt(&grid, &ark2(), FluxKind::EntropyConserving, dt, t_end);
        let ei = rel_err(&grid, &qi, &qr);
        let q3 = run_imex(&grid, &ark3(), FluxKind::EntropyConserving, dt, t_end, 0);
        let e3 = rel_err(&grid, &q3, &qr);
        let qa = run_imex(&grid, &ars343(), FluxKind::EntropyConserving, dt, t_end, 0);
        let ea = rel_err(&grid, &qa, &qr);
        println!(
            "T={t_end:.3}: ark2={e2:.3e} ({:4.2}x) idt={ei:.3e} ({:4.2}x) kc3={e3:.3e} ({:4.2}x) ars343={ea:.3e} ({:4.2}x)",
            1.60e-5 / e2,
            1.30e-4 / ei,
            4.76e-7 / e3,
            4.76e-7 / ea
        );
    }
}

#[allow(dead_code)]
fn mrk_main() {
    use relaxrk::mesh::{build_nonuniform_mesh, MeshSpec, Region};
    use relaxrk::multirate::{decompose, mrk2_integrate};
    use relaxrk::tableaux::mrk2_zones;

    let counts: [(u32, usize); 11] =
        [(0, 16), (1, 8), (2, 8), (3, 12), (4, 20), (5, 68), (4, 20), (3, 12), (2, 8), (1, 8), (0, 16)];
    let spec = MeshSpec {
        x_min: -1.0,
        x_max: 1.0,
        regions: counts.iter().map(|&(level, count)| Region { level, count }).collect(),
        periodic: true,
    };
    let mesh = build_nonuniform_mesh(&spec).unwrap();
    let grid = DgGrid::new(mesh, 3);
    let decomp = decompose(&grid.mesh.levels).unwrap();
    let tabs = mrk2_zones();
    let ent = QuadraticEntropy { weights: None };
    let t_end = 0.2;

    let q0 = grid.project(&|x: f64| (-10.0 * x * x).exp());
    let mut sys = BurgersSystem::new(grid.clone(), FluxKind::LaxFriedrichs);
    let qr = integrate(
        &mut sys,
        &Scheme::Explicit(rk4()),
        &ent,
        Mode::Standard,
        &q0,
        t_end,
        5e-6,
        None,
        None,
    )
    .unwrap()
    .q;

    for (mode, label, anchor) in [
        (Mode::Standard, "MRK2      ", 7.43e-5),
        (Mode::Relaxation, "Relax-MRK2", 7.42e-5),
        (Mode::Idt, "IDT-MRK2  ", 9.22e-5),
    ] {
        let s = mrk2_integrate(&grid, FluxKind::LaxFriedrichs, &decomp, &tabs, &ent, mode, &q0, t_end, 2.5e-3, None, None)
            .unwrap();
        let e = rel_err(&grid, &s.q, &qr);
        println!("{label} ES dt=2.5e-3: err={e:.3e} (paper {anchor:.2e}, ratio {:.2})", anchor / e);
    }

    let mut sys_ec = BurgersSystem::new(grid.clone(), FluxKind::EntropyConserving);
    let qr_ec = integrate(
        &mut sys_ec,
        &Scheme::Explicit(rk4()),
        &ent,
        Mode::Standard,
        &q0,
        t_end,
        5e-6,
        None,
        None,
    )
    .unwrap()
    .q;
    let s = mrk2_integrate(
        &grid,
        FluxKind::EntropyConserving,
        &decomp,
        &tabs,
        &ent,
        Mode::Standard,
        &q0,
        t_end,
        1.0e-3,
        None,
        None,
    )
    .unwrap();
    let e = rel_err(&grid, &s.q, &qr_ec);
    println!("MRK2       EC dt=1.0e-3: err={e:.3e} (paper 5.67e-6, ratio {:.2})", 5.67e-6 / e);
}
