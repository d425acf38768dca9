//! Right-hand sides of the four system families, in plain `f64` form and
//! as taped expressions. Both forms perform the same floating-point
//! operations in the same order.

use crate::autodiff::{Tape, Var};

use super::SystemError;

/// Gravitational acceleration, m/s^2.
pub const GRAVITY: f64 = 9.8;
/// Ion density, deuterium ions per m^3.
pub const ION_DENSITY: f64 = 5e19;
/// Deuterium ion mass, kg.
pub const ION_MASS: f64 = 3.3436e-27;
/// Tokamak major radius, m.
pub const MAJOR_RADIUS: f64 = 1.67;

/// Lorenz system with `phi = (rho, sigma, beta)`.
pub fn lorenz_rhs(phi: &[f64], s: &[f64]) -> [f64; 3] {
    let (rho, sigma, beta) = (phi[0], phi[1], phi[2]);
    let (x, y, z) = (s[0], s[1], s[2]);
    [sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
}

/// Projectile with linear drag; `phi = (v_t)`, state `(x, x', y, y')`.
pub fn ballistic_rhs(phi: &[f64], s: &[f64]) -> Result<[f64; 4], SystemError> {
    if !(phi[0] > 0.0) {
        return Err(SystemError::ParamDomain {
            name: "terminal velocity",
            value: phi[0],
        });
    }
    Ok(ballistic_unchecked(phi, s))
}

pub(crate) fn ballistic_unchecked(phi: &[f64], s: &[f64]) -> [f64; 4] {
    let inv = 1.0 / phi[0];
    [
        s[1],
        -GRAVITY * (s[1] * inv),
        s[3],
        (GRAVITY * (s[3] * inv) + GRAVITY) * -1.0,
    ]
}

/// Cart-pole with `phi = (l, m_c, m_p)`, state `(x, x', theta, theta')`
/// and horizontal force `f`. The angular acceleration is computed first and
/// then feeds the cart acceleration.
pub fn cartpole_rhs(phi: &[f64], s: &[f64], f: f64) -> [f64; 4] {
    let (l, mc, mp) = (phi[0], phi[1], phi[2]);
    let (xd, th, thd) = (s[1], s[2], s[3]);
    let total = mc + mp;
    let inv_total = 1.0 / total;
    let sn = crate::math::sin(th);
    let cs = crate::math::cos(th);
    let pl = mp * l;
    let thd2 = thd * thd;
    let temp = ((pl * (thd2 * sn)) * -1.0 + f * -1.0) * inv_total;
    let num = GRAVITY * sn + cs * temp;
    let den = l * ((mp * (cs * cs)) * inv_total * -1.0 + 4.0 / 3.0);
    let thdd = num * (1.0 / den);
    let xdd = (f + pl * (thd2 * sn - thdd * cs)) * inv_total;
    [xd, xdd, thd, thdd]
}

/// Two-state tokamak energy/rotation model; `phi = (tau_e, tau_m)`,
/// state `(E, omega)`, control `(P, T)`.
pub fn fusion_rhs(phi: &[f64], s: &[f64], u: &[f64]) -> Result<[f64; 2], SystemError> {
    for (name, v) in [("tau_e", phi[0]), ("tau_m", phi[1])] {
        if !(v > 0.0) {
            return Err(SystemError::ParamDomain { name, value: v });
        }
    }
    Ok(fusion_unchecked(phi, s, u))
}

pub(crate) fn fusion_inertia() -> f64 {
    ION_DENSITY * ION_MASS * MAJOR_RADIUS
}

pub(crate) fn fusion_unchecked(phi: &[f64], s: &[f64], u: &[f64]) -> [f64; 2] {
    let k = 1.0 / fusion_inertia();
    [
        u[0] - s[0] * (1.0 / phi[0]),
        u[1] * k - s[1] * (1.0 / phi[1]),
    ]
}

pub(crate) fn lorenz_tape(t: &mut Tape, phi: Var, s: Var) -> Var {
    let rho = t.at(phi, 0);
    let sigma = t.at(phi, 1);
    let beta = t.at(phi, 2);
    let x = t.at(s, 0);
    let y = t.at(s, 1);
    let z = t.at(s, 2);
    let d = t.sub(y, x);
    let dx = t.mul(sigma, d);
    let rz = t.sub(rho, z);
    let xr = t.mul(x, rz);
    let dy = t.sub(xr, y);
    let xy = t.mul(x, y);
    let bz = t.mul(beta, z);
    let dz = t.sub(xy, bz);
    t.concat(&[dx, dy, dz])
}

pub(crate) fn ballistic_tape(t: &mut Tape, phi: Var, s: Var) -> Var {
    let inv = t.recip(phi);
    let xd = t.at(s, 1);
    let yd = t.at(s, 3);
    let a = t.mul(xd, inv);
    let xdd = t.scale(a, -GRAVITY);
    let b = t.mul(yd, inv);
    let b = t.scale(b, GRAVITY);
    let b = t.shift(b, GRAVITY);
    let ydd = t.scale(b, -1.0);
    t.concat(&[xd, xdd, yd, ydd])
}

pub(crate) fn cartpole_tape(t: &mut Tape, phi: Var, s: Var, u: Var) -> Var {
    let l = t.at(phi, 0);
    let mc = t.at(phi, 1);
    let mp = t.at(phi, 2);
    let xd = t.at(s, 1);
    let th = t.at(s, 2);
    let thd = t.at(s, 3);
    let f = t.at(u, 0);
    let total = t.add(mc, mp);
    let inv_total = t.recip(total);
    let sn = t.sin(th);
    let cs = t.cos(th);
    let pl = t.mul(mp, l);
    let thd2 = t.square(thd);
    // temp = (-F - m_p l theta'^2 sin) / (m_c + m_p)
    let a = t.mul(thd2, sn);
    let a = t.mul(pl, a);
    let a = t.scale(a, -1.0);
    let nf = t.scale(f, -1.0);
    let a = t.add(a, nf);
    let temp = t.mul(a, inv_total);
    let gs = t.scale(sn, GRAVITY);
    let ct = t.mul(cs, temp);
    let num = t.add(gs, ct);
    let c2 = t.square(cs);
    let d = t.mul(mp, c2);
    let d = t.mul(d, inv_total);
    let d = t.scale(d, -1.0);
    let d = t.shift(d, 4.0 / 3.0);
    let den = t.mul(l, d);
    let inv_den = t.recip(den);
    let thdd = t.mul(num, inv_den);
    // x'' = (F + m_p l (theta'^2 sin - theta'' cos)) / (m_c + m_p)
    let p = t.mul(thd2, sn);
    let q = t.mul(thdd, cs);
    let pq = t.sub(p, q);
    let r = t.mul(pl, pq);
    let r = t.add(f, r);
    let xdd = t.mul(r, inv_total);
    t.concat(&[xd, xdd, thd, thdd])
}

pub(crate) fn fusion_tape(t: &mut Tape, phi: Var, s: Var, u: Var) -> Var {
    let k = 1.0 / fusion_inertia();
    let taue = t.at(phi, 0);
    let taum = t.at(phi, 1);
    let e = t.at(s, 0);
    let w = t.at(s, 1);
    let p = t.at(u, 0);
    let tq = t.at(u, 1);
    let ie = t.recip(taue);
    let loss_e = t.mul(e, ie);
    let de = t.sub(p, loss_e);
    let drive = t.scale(tq, k);
    let im = t.recip(taum);
    let loss_w = t.mul(w, im);
    let dw = t.sub(drive, loss_w);
    t.concat(&[de, dw])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorenz_values() {
        assert_eq!(lorenz_rhs(&[28.0, 10.0, 8.0 / 3.0], &[0.0, 0.0, 0.0]), [0.0; 3]);
        assert_eq!(lorenz_rhs(&[20.0, 11.0, 2.0], &[1.5, 1.5, 4.0])[0], 0.0);
        let d = lorenz_rhs(&[28.0, 10.0, 8.0 / 3.0], &[1.0, 1.0, 1.0]);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 26.0);
        assert!((d[2] + 1.6667).abs() < 1e-4);
    }

    #[test]
    fn ballistic_values() {
        let d = ballistic_rhs(&[49.0], &[0.0, 10.0, 0.0, 10.0]).unwrap();
        assert_eq!(d[0], 10.0);
        assert!((d[1] + 2.0).abs() < 1e-12);
        assert_eq!(d[2], 10.0);
        assert!((d[3] + 11.8).abs() < 1e-12);
        assert_eq!(ballistic_rhs(&[49.0], &[0.0, 0.0, 0.0, 3.0]).unwrap()[1], 0.0);
        // falling at terminal velocity
        assert!(ballistic_rhs(&[49.0], &[0.0, 0.0, 0.0, -49.0]).unwrap()[3].abs() < 1e-12);
        assert!(ballistic_rhs(&[0.0], &[0.0; 4]).is_err());
        assert!(ballistic_rhs(&[-1.0], &[0.0; 4]).is_err());
    }

    #[test]
    fn cartpole_values() {
        let phi = [0.5, 1.0, 0.1];
        assert_eq!(cartpole_rhs(&phi, &[0.3, 0.7, 0.0, 0.0], 0.0), [0.7, 0.0, 0.0, 0.0]);
        let d = cartpole_rhs(&phi, &[0.0, 0.0, 0.0, 0.0], 10.0);
        assert!((d[3] + 14.634).abs() < 1e-3, "{}", d[3]);
        assert!((d[1] - 9.756).abs() < 1e-3, "{}", d[1]);
        let a = cartpole_rhs(&phi, &[0.0, 0.0, 0.1, 0.0], 10.0);
        let b = cartpole_rhs(&phi, &[0.0, 0.0, -0.1, 0.0], -10.0);
        assert!((a[1] + b[1]).abs() < 1e-12 && (a[3] + b[3]).abs() < 1e-12);
    }

    #[test]
    fn fusion_values() {
        let phi = [0.2, 0.1];
        assert!(fusion_rhs(&phi, &[1e6, 0.0], &[5e6, 0.0]).unwrap()[0].abs() < 1e-9);
        let tq = 100.0 * fusion_inertia() / 0.1;
        assert!(fusion_rhs(&phi, &[0.0, 100.0], &[0.0, tq]).unwrap()[1].abs() < 1e-9);
        let d = fusion_rhs(&phi, &[0.0, 100.0], &[0.0, 0.0]).unwrap();
        assert!((d[1] + 1000.0).abs() < 1e-9);
        assert!(fusion_rhs(&[0.0, 0.1], &[0.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(fusion_rhs(&[0.1, -0.1], &[0.0, 0.0], &[0.0, 0.0]).is_err());
    }
}
