// Shows that an n=2 Kronecker linear layer with the complex mixing preset
// multiplies complex numbers, and how much smaller its parameter set is.

#include <complex>
#include <iostream>

#include "kronmri/kronmri.hpp"

using namespace kronmri;

int main() {
    const AlgebraPreset cplx = preset("complex");
    const std::vector<double> a{1, 2}, b{3, 4};
    const auto via_layer = algebra_multiply_via_layer(cplx, a, b);
    const std::complex<double> direct = std::complex<double>(1, 2) * std::complex<double>(3, 4);
    std::cout << "(1+2i)(3+4i) via layer: " << via_layer[0] << (via_layer[1] < 0 ? "" : "+") << via_layer[1]
              << "i, std::complex: " << direct.real() << "+" << direct.imag() << "i\n";

    Rng rng(0);
    std::cout << "verify complex:    max deviation " << verify_algebra(cplx, 1000, rng).max_abs_deviation << "\n";
    std::cout << "verify quaternion: max deviation " << verify_algebra(preset("quaternion"), 1000, rng).max_abs_deviation
              << "\n\n";

    std::cout << "3x3 conv 64->64 parameters\n";
    std::cout << "  dense      " << dense_conv_count(64, 64, 3) << "\n";
    for (std::size_t n : {2u, 4u})
        std::cout << "  kron n=" << n << "   " << kron_conv_count(64, 64, 3, n) << "\n";

    UNetConfig unet;
    const std::size_t kron_total = unet_param_count(unet);
    unet.layer_kind = LayerKind::dense;
    std::cout << "\nU-Net (base 64): dense " << unet_param_count(unet) << ", kron n=2 " << kron_total << "\n";
    return 0;
}
