#include "ctml/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "ctml/parallel.hpp"

namespace ctml {

namespace {

// numpy-style reflection without edge repeat; needs pad <= extent - 1
inline int reflect_index(int i, int extent)
{
    if (i < 0) return -i;
    if (i >= extent) return 2 * extent - 2 - i;
    return i;
}

template <typename T>
Tensor<T> pad_input(const Tensor<T>& x, int p, PadMode mode)
{
    if (p == 0) return x;
    const Shape s = x.shape;
    if (mode == PadMode::reflect && p > std::min(s.h, s.w) - 1)
        throw dimension_error("reflect padding " + std::to_string(p) + " too large for input " +
                              s.str());
    Tensor<T> out(Shape{s.n, s.c, s.h + 2 * p, s.w + 2 * p});
    for (int b = 0; b < s.n; ++b)
        for (int c = 0; c < s.c; ++c)
            for (int py = 0; py < s.h + 2 * p; ++py) {
                const int sy = mode == PadMode::reflect ? reflect_index(py - p, s.h) : py - p;
                if (sy < 0 || sy >= s.h) continue; // zero padding outside
                for (int px = 0; px < s.w + 2 * p; ++px) {
                    const int sx = mode == PadMode::reflect ? reflect_index(px - p, s.w) : px - p;
                    if (sx < 0 || sx >= s.w) continue;
                    out.at(b, c, py, px) = x.at(b, c, sy, sx);
                }
            }
    return out;
}

// transpose of pad_input: fold padded entries back onto their sources; the
// per-slice loop order is fixed, slices are independent
template <typename T>
void pad_backward(const Tensor<T>& gp, int p, PadMode mode, Tensor<T>& gx)
{
    const Shape s = gx.shape;
    if (p == 0) {
        for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += gp.v[i];
        return;
    }
#pragma omp parallel for num_threads(max_threads()) schedule(static) collapse(2)
    for (int b = 0; b < s.n; ++b)
        for (int c = 0; c < s.c; ++c)
            for (int py = 0; py < s.h + 2 * p; ++py) {
                const int sy = mode == PadMode::reflect ? reflect_index(py - p, s.h) : py - p;
                if (sy < 0 || sy >= s.h) continue;
                for (int px = 0; px < s.w + 2 * p; ++px) {
                    const int sx = mode == PadMode::reflect ? reflect_index(px - p, s.w) : px - p;
                    if (sx < 0 || sx >= s.w) continue;
                    gx.at(b, c, sy, sx) += gp.at(b, c, py, px);
                }
            }
}

template <typename T>
void conv_forward(const Tensor<T>& xp, const Tensor<T>& w, const Tensor<T>& b, int stride,
                  Tensor<T>& out)
{
    const int oc = w.shape.n, ic = w.shape.c, k = w.shape.h;
    const int oh = out.shape.h, ow = out.shape.w;
    const int batches = out.shape.n;

#pragma omp parallel for num_threads(max_threads()) schedule(static) collapse(2)
    for (int bi = 0; bi < batches; ++bi)
        for (int o = 0; o < oc; ++o)
            for (int oy = 0; oy < oh; ++oy) {
                T* dst = &out.v[out.index(bi, o, oy, 0)];
                for (int ox = 0; ox < ow; ++ox) dst[ox] = b.v[o];
                for (int i = 0; i < ic; ++i)
                    for (int ky = 0; ky < k; ++ky) {
                        const T* src = &xp.v[xp.index(bi, i, oy * stride + ky, 0)];
                        const T* wr = &w.v[w.index(o, i, ky, 0)];
                        for (int kx = 0; kx < k; ++kx) {
                            const T coeff = wr[kx];
                            if (stride == 1) {
                                const T* s = src + kx;
                                for (int ox = 0; ox < ow; ++ox) dst[ox] += coeff * s[ox];
                            } else {
                                for (int ox = 0; ox < ow; ++ox)
                                    dst[ox] += coeff * src[ox * stride + kx];
                            }
                        }
                    }
            }
}

template <typename T>
void conv_backward_data(const Tensor<T>& g, const Tensor<T>& w, int stride, Tensor<T>& gxp)
{
    const int oc = w.shape.n, ic = w.shape.c, k = w.shape.h;
    const int oh = g.shape.h, ow = g.shape.w;
    const int ph = gxp.shape.h, pw = gxp.shape.w;
    const int batches = g.shape.n;

#pragma omp parallel for num_threads(max_threads()) schedule(static) collapse(2)
    for (int bi = 0; bi < batches; ++bi)
        for (int i = 0; i < ic; ++i)
            for (int py = 0; py < ph; ++py) {
                T* dst = &gxp.v[gxp.index(bi, i, py, 0)];
                for (int o = 0; o < oc; ++o)
                    for (int ky = 0; ky < k; ++ky) {
                        const int num = py - ky;
                        if (num < 0 || num % stride != 0) continue;
                        const int oy = num / stride;
                        if (oy >= oh) continue;
                        const T* grow = &g.v[g.index(bi, o, oy, 0)];
                        const T* wr = &w.v[w.index(o, i, ky, 0)];
                        if (stride == 1) {
                            for (int kx = 0; kx < k; ++kx) {
                                const T coeff = wr[kx];
                                const int lo = std::max(0, kx);
                                const int hi = std::min(pw, ow + kx);
                                for (int px = lo; px < hi; ++px)
                                    dst[px] += coeff * grow[px - kx];
                            }
                        } else {
                            for (int px = 0; px < pw; ++px) {
                                T acc = 0;
                                for (int kx = 0; kx < k; ++kx) {
                                    const int nx = px - kx;
                                    if (nx < 0 || nx % stride != 0) continue;
                                    const int ox = nx / stride;
                                    if (ox >= ow) continue;
                                    acc += wr[kx] * grow[ox];
                                }
                                dst[px] += acc;
                            }
                        }
                    }
            }
}

template <typename T>
void conv_backward_weights(const Tensor<T>& g, const Tensor<T>& xp, int stride, Tensor<T>& gw,
                           Tensor<T>& gb)
{
    const int oc = gw.shape.n, ic = gw.shape.c, k = gw.shape.h;
    const int oh = g.shape.h, ow = g.shape.w;
    const int batches = g.shape.n;

#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (int o = 0; o < oc; ++o) {
        T bias_acc = 0;
        for (int bi = 0; bi < batches; ++bi)
            for (int oy = 0; oy < oh; ++oy) {
                const T* grow = &g.v[g.index(bi, o, oy, 0)];
                for (int ox = 0; ox < ow; ++ox) bias_acc += grow[ox];
            }
        gb.v[o] += bias_acc;

        for (int i = 0; i < ic; ++i)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    T acc = 0;
                    for (int bi = 0; bi < batches; ++bi)
                        for (int oy = 0; oy < oh; ++oy) {
                            const T* grow = &g.v[g.index(bi, o, oy, 0)];
                            const T* src = &xp.v[xp.index(bi, i, oy * stride + ky, kx)];
                            if (stride == 1) {
                                for (int ox = 0; ox < ow; ++ox) acc += grow[ox] * src[ox];
                            } else {
                                for (int ox = 0; ox < ow; ++ox) acc += grow[ox] * src[ox * stride];
                            }
                        }
                    gw.v[gw.index(o, i, ky, kx)] += acc;
                }
    }
}

template <typename T>
ImageGrid slice_to_image(const Tensor<T>& t, int b, int c, double pixel_size)
{
    ImageGrid img = ImageGrid::zeros(t.shape.h, pixel_size);
    const size_t base = t.index(b, c, 0, 0);
    for (size_t i = 0; i < img.v.size(); ++i) img.v[i] = static_cast<double>(t.v[base + i]);
    return img;
}

template <typename T>
Sinogram slice_to_sinogram(const Tensor<T>& t, int b, int c, const ScanGeometry& geom)
{
    Sinogram p = Sinogram::zeros(geom);
    const size_t base = t.index(b, c, 0, 0);
    for (size_t i = 0; i < p.v.size(); ++i) p.v[i] = static_cast<double>(t.v[base + i]);
    return p;
}

template <typename T>
void add_slice(Tensor<T>& t, int b, int c, const std::vector<double>& src)
{
    const size_t base = t.index(b, c, 0, 0);
    for (size_t i = 0; i < src.size(); ++i) t.v[base + i] += static_cast<T>(src[i]);
}

void require_same(const Shape& a, const Shape& b, const char* what)
{
    if (!(a == b))
        throw dimension_error(std::string(what) + ": shapes " + a.str() + " and " + b.str() +
                              " differ");
}

} // namespace

template <typename T>
int Tape<T>::check(Node id) const
{
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
        throw config_error("tape node " + std::to_string(id) + " out of range");
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::push(Tensor<T> value, bool requires_grad,
                                     std::vector<Node> inputs,
                                     std::function<void(Tape&)> backprop)
{
    nodes_.push_back(NodeData{std::move(value), Tensor<T>{}, requires_grad});
    const Node id = static_cast<Node>(nodes_.size() - 1);
    if (requires_grad && backprop)
        ops_.push_back(OpRecord{std::move(inputs), id, std::move(backprop)});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::leaf(Tensor<T> value, bool requires_grad)
{
    return push(std::move(value), requires_grad, {}, nullptr);
}

template <typename T>
typename Tape<T>::Node Tape<T>::conv2d(Node x, Node weight, Node bias, int stride, PadMode pad,
                                       int pad_size)
{
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(weight);
    const Tensor<T>& bv = value(bias);
    const int k = wv.shape.h;
    if (wv.shape.w != k || k % 2 == 0)
        throw dimension_error("conv kernel must be odd and square, got " + wv.shape.str());
    if (wv.shape.c != xv.shape.c)
        throw dimension_error("conv input channels " + std::to_string(xv.shape.c) +
                              " do not match weight " + wv.shape.str());
    if (bv.shape.c != wv.shape.n || bv.shape.n != 1 || bv.shape.h != 1 || bv.shape.w != 1)
        throw dimension_error("conv bias shape " + bv.shape.str() + " must be (1, out_c, 1, 1)");
    if (stride < 1) throw config_error("conv stride must be >= 1");
    const int p = pad_size < 0 ? (k - 1) / 2 : pad_size;

    auto xp = std::make_shared<Tensor<T>>(pad_input(xv, p, pad));
    const int oh = (xp->shape.h - k) / stride + 1;
    const int ow = (xp->shape.w - k) / stride + 1;
    if (oh < 1 || ow < 1)
        throw dimension_error("conv output would be empty for input " + xv.shape.str());

    Tensor<T> out(Shape{xv.shape.n, wv.shape.n, oh, ow});
    conv_forward(*xp, wv, bv, stride, out);

    const bool rg = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
    const Node id = push(std::move(out), rg, {x, weight, bias}, nullptr);
    if (rg)
        ops_.push_back(OpRecord{
            {x, weight, bias}, id, [id, x, weight, bias, stride, pad, p, xp](Tape& t) {
                const Tensor<T>& g = t.grad(id);
                if (t.requires_grad(x)) {
                    Tensor<T> gxp(xp->shape);
                    conv_backward_data(g, t.value(weight), stride, gxp);
                    pad_backward(gxp, p, pad, t.grad_ref(x));
                }
                if (t.requires_grad(weight) || t.requires_grad(bias)) {
                    Tensor<T> gw(t.value(weight).shape);
                    Tensor<T> gb(t.value(bias).shape);
                    conv_backward_weights(g, *xp, stride, gw, gb);
                    if (t.requires_grad(weight)) {
                        auto& dst = t.grad_ref(weight);
                        for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += gw.v[i];
                    }
                    if (t.requires_grad(bias)) {
                        auto& dst = t.grad_ref(bias);
                        for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += gb.v[i];
                    }
                }
            }});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::relu(Node x)
{
    const Tensor<T>& xv = value(x);
    Tensor<T> out(xv.shape);
    for (size_t i = 0; i < xv.v.size(); ++i) out.v[i] = xv.v[i] > T(0) ? xv.v[i] : T(0);
    const bool rg = requires_grad(x);
    const Node id = push(std::move(out), rg, {x}, nullptr);
    if (rg)
        ops_.push_back(OpRecord{{x}, id, [id, x](Tape& t) {
                                    const Tensor<T>& g = t.grad(id);
                                    const Tensor<T>& xv2 = t.value(x);
                                    auto& gx = t.grad_ref(x);
                                    for (size_t i = 0; i < gx.v.size(); ++i)
                                        if (xv2.v[i] > T(0)) gx.v[i] += g.v[i];
                                }});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::add(Node a, Node b)
{
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    require_same(av.shape, bv.shape, "add");
    Tensor<T> out(av.shape);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = av.v[i] + bv.v[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    const Node id = push(std::move(out), rg, {a, b}, nullptr);
    if (rg)
        ops_.push_back(OpRecord{{a, b}, id, [id, a, b](Tape& t) {
                                    const Tensor<T>& g = t.grad(id);
                                    if (t.requires_grad(a)) {
                                        auto& ga = t.grad_ref(a);
                                        for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += g.v[i];
                                    }
                                    if (t.requires_grad(b)) {
                                        auto& gb = t.grad_ref(b);
                                        for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += g.v[i];
                                    }
                                }});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::concat_channels(Node a, Node b)
{
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (av.shape.n != bv.shape.n || av.shape.h != bv.shape.h || av.shape.w != bv.shape.w)
        throw dimension_error("concat: shapes " + av.shape.str() + " and " + bv.shape.str() +
                              " differ outside the channel dim");
    Tensor<T> out(Shape{av.shape.n, av.shape.c + bv.shape.c, av.shape.h, av.shape.w});
    const int ca = av.shape.c;
    for (int bi = 0; bi < out.shape.n; ++bi)
        for (int c = 0; c < out.shape.c; ++c) {
            const Tensor<T>& src = c < ca ? av : bv;
            const int sc = c < ca ? c : c - ca;
            std::copy_n(&src.v[src.index(bi, sc, 0, 0)],
                        static_cast<size_t>(out.shape.h) * out.shape.w,
                        &out.v[out.index(bi, c, 0, 0)]);
        }
    const bool rg = requires_grad(a) || requires_grad(b);
    const Node id = push(std::move(out), rg, {a, b}, nullptr);
    if (rg)
        ops_.push_back(OpRecord{{a, b}, id, [id, a, b, ca](Tape& t) {
                                    const Tensor<T>& g = t.grad(id);
                                    const size_t plane =
                                        static_cast<size_t>(g.shape.h) * g.shape.w;
                                    for (int bi = 0; bi < g.shape.n; ++bi)
                                        for (int c = 0; c < g.shape.c; ++c) {
                                            const Node dstn = c < ca ? a : b;
                                            if (!t.requires_grad(dstn)) continue;
                                            auto& dst = t.grad_ref(dstn);
                                            const int sc = c < ca ? c : c - ca;
                                            const size_t di = dst.index(bi, sc, 0, 0);
                                            const size_t gi = g.index(bi, c, 0, 0);
                                            for (size_t i = 0; i < plane; ++i)
                                                dst.v[di + i] += g.v[gi + i];
                                        }
                                }});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::slice_channels(Node x, int c0, int count)
{
    const Tensor<T>& xv = value(x);
    if (c0 < 0 || count < 1 || c0 + count > xv.shape.c)
        throw dimension_error("channel slice [" + std::to_string(c0) + ", " +
                              std::to_string(c0 + count) + ") out of range for " +
                              xv.shape.str());
    Tensor<T> out(Shape{xv.shape.n, count, xv.shape.h, xv.shape.w});
    const size_t plane = static_cast<size_t>(xv.shape.h) * xv.shape.w;
    for (int bi = 0; bi < xv.shape.n; ++bi)
        for (int c = 0; c < count; ++c)
            std::copy_n(&xv.v[xv.index(bi, c0 + c, 0, 0)], plane, &out.v[out.index(bi, c, 0, 0)]);
    const bool rg = requires_grad(x);
    const Node id = push(std::move(out), rg, {x}, nullptr);
    if (rg)
        ops_.push_back(
            OpRecord{{x}, id, [id, x, c0, count](Tape& t) {
                         const Tensor<T>& g = t.grad(id);
                         auto& gx = t.grad_ref(x);
                         const size_t plane = static_cast<size_t>(g.shape.h) * g.shape.w;
                         for (int bi = 0; bi < g.shape.n; ++bi)
                             for (int c = 0; c < count; ++c) {
                                 const size_t di = gx.index(bi, c0 + c, 0, 0);
                                 const size_t gi = g.index(bi, c, 0, 0);
                                 for (size_t i = 0; i < plane; ++i) gx.v[di + i] += g.v[gi + i];
                             }
                     }});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::downsample2(Node x)
{
    const Tensor<T>& xv = value(x);
    if (xv.shape.h % 2 != 0 || xv.shape.w % 2 != 0)
        throw dimension_error("downsample2 needs even spatial dims, got " + xv.shape.str());
    Tensor<T> out(Shape{xv.shape.n, xv.shape.c, xv.shape.h / 2, xv.shape.w / 2});
    for (int bi = 0; bi < xv.shape.n; ++bi)
        for (int c = 0; c < xv.shape.c; ++c)
            for (int oy = 0; oy < out.shape.h; ++oy)
                for (int ox = 0; ox < out.shape.w; ++ox)
                    out.at(bi, c, oy, ox) =
                        (xv.at(bi, c, 2 * oy, 2 * ox) + xv.at(bi, c, 2 * oy, 2 * ox + 1) +
                         xv.at(bi, c, 2 * oy + 1, 2 * ox) + xv.at(bi, c, 2 * oy + 1, 2 * ox + 1)) /
                        T(4);
    const bool rg = requires_grad(x);
    const Node id = push(std::move(out), rg, {x}, nullptr);
    if (rg)
        ops_.push_back(OpRecord{{x}, id, [id, x](Tape& t) {
                                    const Tensor<T>& g = t.grad(id);
                                    auto& gx = t.grad_ref(x);
                                    for (int bi = 0; bi < gx.shape.n; ++bi)
                                        for (int c = 0; c < gx.shape.c; ++c)
                                            for (int iy = 0; iy < gx.shape.h; ++iy)
                                                for (int ix = 0; ix < gx.shape.w; ++ix)
                                                    gx.at(bi, c, iy, ix) +=
                                                        g.at(bi, c, iy / 2, ix / 2) / T(4);
                                }});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::upsample2(Node x)
{
    const Tensor<T>& xv = value(x);
    Tensor<T> out(Shape{xv.shape.n, xv.shape.c, xv.shape.h * 2, xv.shape.w * 2});
    for (int bi = 0; bi < xv.shape.n; ++bi)
        for (int c = 0; c < xv.shape.c; ++c)
            for (int oy = 0; oy < out.shape.h; ++oy)
                for (int ox = 0; ox < out.shape.w; ++ox)
                    out.at(bi, c, oy, ox) = xv.at(bi, c, oy / 2, ox / 2);
    const bool rg = requires_grad(x);
    const Node id = push(std::move(out), rg, {x}, nullptr);
    if (rg)
        ops_.push_back(OpRecord{{x}, id, [id, x](Tape& t) {
                                    const Tensor<T>& g = t.grad(id);
                                    auto& gx = t.grad_ref(x);
                                    for (int bi = 0; bi < gx.shape.n; ++bi)
                                        for (int c = 0; c < gx.shape.c; ++c)
                                            for (int iy = 0; iy < gx.shape.h; ++iy)
                                                for (int ix = 0; ix < gx.shape.w; ++ix)
                                                    gx.at(bi, c, iy, ix) +=
                                                        g.at(bi, c, 2 * iy, 2 * ix) +
                                                        g.at(bi, c, 2 * iy, 2 * ix + 1) +
                                                        g.at(bi, c, 2 * iy + 1, 2 * ix) +
                                                        g.at(bi, c, 2 * iy + 1, 2 * ix + 1);
                                }});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::scale_shift(Node x, double a, double b)
{
    const Tensor<T>& xv = value(x);
    Tensor<T> out(xv.shape);
    const T ta = static_cast<T>(a), tb = static_cast<T>(b);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = ta * xv.v[i] + tb;
    const bool rg = requires_grad(x);
    const Node id = push(std::move(out), rg, {x}, nullptr);
    if (rg)
        ops_.push_back(OpRecord{{x}, id, [id, x, ta](Tape& t) {
                                    const Tensor<T>& g = t.grad(id);
                                    auto& gx = t.grad_ref(x);
                                    for (size_t i = 0; i < gx.v.size(); ++i)
                                        gx.v[i] += ta * g.v[i];
                                }});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::row_blend(Node fill, Node measured, const ViewMask& mask)
{
    const Tensor<T>& fv = value(fill);
    const Tensor<T>& mv = value(measured);
    require_same(fv.shape, mv.shape, "row_blend");
    if (fv.shape.h != mask.n_views())
        throw dimension_error("row_blend: " + std::to_string(mask.n_views()) +
                              "-view mask does not match tensor " + fv.shape.str());
    Tensor<T> out(fv.shape);
    const size_t roww = static_cast<size_t>(fv.shape.w);
    for (int bi = 0; bi < fv.shape.n; ++bi)
        for (int c = 0; c < fv.shape.c; ++c)
            for (int row = 0; row < fv.shape.h; ++row) {
                const Tensor<T>& src = mask.kept[row] ? mv : fv;
                std::copy_n(&src.v[src.index(bi, c, row, 0)], roww,
                            &out.v[out.index(bi, c, row, 0)]);
            }
    const bool rg = requires_grad(fill) || requires_grad(measured);
    const Node id = push(std::move(out), rg, {fill, measured}, nullptr);
    if (rg) {
        auto kept = std::make_shared<std::vector<std::uint8_t>>(mask.kept);
        ops_.push_back(OpRecord{
            {fill, measured}, id, [id, fill, measured, kept](Tape& t) {
                const Tensor<T>& g = t.grad(id);
                const size_t roww = static_cast<size_t>(g.shape.w);
                for (int bi = 0; bi < g.shape.n; ++bi)
                    for (int c = 0; c < g.shape.c; ++c)
                        for (int row = 0; row < g.shape.h; ++row) {
                            const Node dstn = (*kept)[row] ? measured : fill;
                            if (!t.requires_grad(dstn)) continue;
                            auto& dst = t.grad_ref(dstn);
                            const size_t di = dst.index(bi, c, row, 0);
                            const size_t gi = g.index(bi, c, row, 0);
                            for (size_t i = 0; i < roww; ++i) dst.v[di + i] += g.v[gi + i];
                        }
            }});
    }
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::fp_layer(Node img, const ScanGeometry& geom)
{
    const Tensor<T>& xv = value(img);
    if (xv.shape.h != geom.grid_size || xv.shape.w != geom.grid_size)
        throw dimension_error("fp_layer: image " + xv.shape.str() + " does not match grid " +
                              std::to_string(geom.grid_size));
    Tensor<T> out(Shape{xv.shape.n, xv.shape.c, geom.n_views, geom.n_detectors});
    for (int bi = 0; bi < xv.shape.n; ++bi)
        for (int c = 0; c < xv.shape.c; ++c) {
            const Sinogram p =
                forward_project(slice_to_image(xv, bi, c, geom.pixel_size), geom);
            const size_t base = out.index(bi, c, 0, 0);
            for (size_t i = 0; i < p.v.size(); ++i) out.v[base + i] = static_cast<T>(p.v[i]);
        }
    const bool rg = requires_grad(img);
    const Node id = push(std::move(out), rg, {img}, nullptr);
    if (rg)
        ops_.push_back(OpRecord{{img}, id, [id, img, geom](Tape& t) {
                                    const Tensor<T>& g = t.grad(id);
                                    auto& gx = t.grad_ref(img);
                                    for (int bi = 0; bi < g.shape.n; ++bi)
                                        for (int c = 0; c < g.shape.c; ++c) {
                                            const ImageGrid gi = back_project(
                                                slice_to_sinogram(g, bi, c, geom), geom);
                                            add_slice(gx, bi, c, gi.v);
                                        }
                                }});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::fbp_layer(Node sino, const ScanGeometry& geom, Window window)
{
    const Tensor<T>& xv = value(sino);
    if (xv.shape.h != geom.n_views || xv.shape.w != geom.n_detectors)
        throw dimension_error("fbp_layer: sinogram " + xv.shape.str() +
                              " does not match geometry " + std::to_string(geom.n_views) + "x" +
                              std::to_string(geom.n_detectors));
    Tensor<T> out(Shape{xv.shape.n, xv.shape.c, geom.grid_size, geom.grid_size});
    for (int bi = 0; bi < xv.shape.n; ++bi)
        for (int c = 0; c < xv.shape.c; ++c) {
            const ImageGrid img = fbp(slice_to_sinogram(xv, bi, c, geom), geom, window);
            const size_t base = out.index(bi, c, 0, 0);
            for (size_t i = 0; i < img.v.size(); ++i) out.v[base + i] = static_cast<T>(img.v[i]);
        }
    const bool rg = requires_grad(sino);
    const Node id = push(std::move(out), rg, {sino}, nullptr);
    if (rg)
        ops_.push_back(
            OpRecord{{sino}, id, [id, sino, geom, window](Tape& t) {
                         const Tensor<T>& g = t.grad(id);
                         auto& gx = t.grad_ref(sino);
                         for (int bi = 0; bi < g.shape.n; ++bi)
                             for (int c = 0; c < g.shape.c; ++c) {
                                 const Sinogram gp = fbp_adjoint(
                                     slice_to_image(g, bi, c, geom.pixel_size), geom, window);
                                 add_slice(gx, bi, c, gp.v);
                             }
                     }});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::mse(Node a, Node b)
{
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    require_same(av.shape, bv.shape, "mse");
    double acc = 0.0;
    for (size_t i = 0; i < av.v.size(); ++i) {
        const double d = static_cast<double>(av.v[i]) - static_cast<double>(bv.v[i]);
        acc += d * d;
    }
    Tensor<T> out(Shape{1, 1, 1, 1});
    out.v[0] = static_cast<T>(acc / static_cast<double>(av.v.size()));
    const bool rg = requires_grad(a) || requires_grad(b);
    const Node id = push(std::move(out), rg, {a, b}, nullptr);
    if (rg)
        ops_.push_back(OpRecord{
            {a, b}, id, [id, a, b](Tape& t) {
                const T g = t.grad(id).v[0];
                const Tensor<T>& av2 = t.value(a);
                const Tensor<T>& bv2 = t.value(b);
                const T scale = g * T(2) / static_cast<T>(av2.v.size());
                if (t.requires_grad(a)) {
                    auto& ga = t.grad_ref(a);
                    for (size_t i = 0; i < ga.v.size(); ++i)
                        ga.v[i] += scale * (av2.v[i] - bv2.v[i]);
                }
                if (t.requires_grad(b)) {
                    auto& gb = t.grad_ref(b);
                    for (size_t i = 0; i < gb.v.size(); ++i)
                        gb.v[i] += scale * (bv2.v[i] - av2.v[i]);
                }
            }});
    return id;
}

template <typename T>
typename Tape<T>::Node Tape<T>::sum(Node x)
{
    const Tensor<T>& xv = value(x);
    double acc = 0.0;
    for (const T v : xv.v) acc += static_cast<double>(v);
    Tensor<T> out(Shape{1, 1, 1, 1});
    out.v[0] = static_cast<T>(acc);
    const bool rg = requires_grad(x);
    const Node id = push(std::move(out), rg, {x}, nullptr);
    if (rg)
        ops_.push_back(OpRecord{{x}, id, [id, x](Tape& t) {
                                    const T g = t.grad(id).v[0];
                                    auto& gx = t.grad_ref(x);
                                    for (auto& v : gx.v) v += g;
                                }});
    return id;
}

template <typename T>
void Tape<T>::backward(Node loss)
{
    check(loss);
    if (!nodes_[loss].value.is_scalar())
        throw config_error("backward needs a scalar loss, got " +
                           nodes_[loss].value.shape.str());
    for (auto& n : nodes_) n.grad = Tensor<T>(n.value.shape);
    nodes_[loss].grad.v[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backprop(*this);
}

template class Tape<float>;
template class Tape<double>;

} // namespace ctml
