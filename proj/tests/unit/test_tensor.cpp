#include "auxq/errors.hpp"
#include "auxq/tensor.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace auxq;

TEST(Tensor, SizeMatchesShapeProduct)
{
    Tensor<float> t(Shape{2, 3, 4});
    EXPECT_EQ(t.size(), 24u);
    EXPECT_EQ(numel(t.shape()), t.size());
    EXPECT_EQ(Tensor<double>::scalar(3.0).size(), 1u);
    EXPECT_EQ(Tensor<double>(Shape{0, 5}).size(), 0u);
}

TEST(Tensor, RejectsDataOfWrongLength)
{
    EXPECT_THROW(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ReshapeKeepsDataAndChecksCount)
{
    Tensor<double> t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    auto r = t.reshaped({3, 2});
    EXPECT_EQ(r.shape(), (Shape{3, 2}));
    EXPECT_EQ(r[5], 6.0);
    EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, BitEqualDistinguishesSignedZero)
{
    Tensor<double> a(Shape{1}, {0.0}), b(Shape{1}, {-0.0});
    EXPECT_FALSE(bit_equal(a, b));
    EXPECT_TRUE(bit_equal(a, a));
}

TEST(Tensor, FiniteCheck)
{
    Tensor<float> t(Shape{3}, {1.f, 2.f, 3.f});
    EXPECT_TRUE(all_finite(t));
    t[1] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_FALSE(all_finite(t));
    t[1] = std::numeric_limits<float>::infinity();
    EXPECT_FALSE(all_finite(t));
}

TEST(Tensor, ItemRequiresSingleElement)
{
    EXPECT_EQ(Tensor<double>::scalar(2.5).item(), 2.5);
    EXPECT_THROW(Tensor<double>(Shape{2}).item(), ShapeError);
}
