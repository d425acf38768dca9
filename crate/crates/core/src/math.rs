//! Scalar math. Uses the platform library when `std` is enabled and the
//! portable `libm` port otherwise.

macro_rules! unary {
    ($($name:ident => $std:ident, $libm:ident);* $(;)?) => {
        $(
            #[inline]
            pub fn $name(x: f64) -> f64 {
                #[cfg(feature = "std")]
                {
                    x.$std()
                }
                #[cfg(not(feature = "std"))]
                {
                    libm::$libm(x)
                }
            }
        )*
    };
}

unary!(
    exp => exp, exp;
    ln => ln, log;
    log1p => ln_1p, log1p;
    log2 => log2, log2;
    sin => sin, sin;
    cos => cos, cos;
    tanh => tanh, tanh;
    sqrt => sqrt, sqrt;
    ceil => ceil, ceil;
);

#[inline]
pub fn pow(x: f64, y: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.powf(y)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::pow(x, y)
    }
}
