//! Structure-tensor eigen-decomposition on a few hand-picked matrices,
//! including exactly repeated eigenvalues.

use myofiber::structure_tensor::{
    eigendecompose, fiber_direction, fractional_anisotropy, is_degenerate, Sym3,
};

fn show(name: &str, s: Sym3) -> myofiber::Result<()> {
    let e = eigendecompose(&s)?;
    let [l1, l2, l3] = e.lambda;
    println!("{name}");
    println!(
        "  λ = {l1:.6} {l2:.6} {l3:.6}, residual {:.1e}",
        e.residual(&s)
    );
    if is_degenerate(e.lambda) {
        println!("  isotropic, no fiber direction");
    } else {
        let f = fiber_direction(&e);
        println!("  fiber {:+.4} {:+.4} {:+.4}", f[0], f[1], f[2]);
        println!("  FA {:.4}", fractional_anisotropy(e.lambda)?);
    }
    Ok(())
}

fn main() -> myofiber::Result<()> {
    // gradients mostly along x and y: the fiber runs along z
    show(
        "planar gradients",
        Sym3 {
            xx: 4.0,
            yy: 3.0,
            zz: 0.1,
            xy: 0.2,
            xz: 0.0,
            yz: 0.0,
        },
    )?;
    show(
        "tilted",
        Sym3 {
            xx: 2.0,
            yy: 2.0,
            zz: 2.0,
            xy: 1.0,
            xz: 0.5,
            yz: -0.3,
        },
    )?;
    show(
        "double eigenvalue",
        Sym3 {
            xx: 5.0,
            yy: 5.0,
            zz: 1.0,
            xy: 0.0,
            xz: 0.0,
            yz: 0.0,
        },
    )?;
    show(
        "isotropic",
        Sym3 {
            xx: 1.0,
            yy: 1.0,
            zz: 1.0,
            xy: 0.0,
            xz: 0.0,
            yz: 0.0,
        },
    )?;
    Ok(())
}
