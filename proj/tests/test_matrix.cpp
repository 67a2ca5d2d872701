#include "loqt/matrix.hpp"

#include <gtest/gtest.h>

#include <initializer_list>
#include <stdexcept>

namespace {

using loqt::Matrix;

Matrix from_values(std::size_t rows, std::size_t cols,
                   std::initializer_list<float> values) {
  Matrix out(rows, cols);
  std::size_t i = 0;
  for (float v : values) out.data[i++] = v;
  return out;
}

float max_abs_diff(const Matrix& a, const Matrix& b) {
  EXPECT_EQ(a.rows, b.rows);
  EXPECT_EQ(a.cols, b.cols);
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::fabs(a.data[i] - b.data[i]));
  }
  return worst;
}

TEST(MatrixTest, MatmulShapeLaw) {
  const Matrix a = from_values(2, 3, {1, 2, 3, 4, 5, 6});
  const Matrix b = from_values(3, 2, {7, 8, 9, 10, 11, 12});
  const Matrix c = loqt::matmul(a, b);
  ASSERT_EQ(c.rows, 2u);
  ASSERT_EQ(c.cols, 2u);
  EXPECT_FLOAT_EQ(c(0, 0), 58.0f);
  EXPECT_FLOAT_EQ(c(0, 1), 64.0f);
  EXPECT_FLOAT_EQ(c(1, 0), 139.0f);
  EXPECT_FLOAT_EQ(c(1, 1), 154.0f);
}

TEST(MatrixTest, MatmulIdentityIsExact) {
  loqt::Rng rng(1);
  const Matrix a = loqt::randn(5, 5, rng);
  const Matrix c = loqt::matmul(a, Matrix::identity(5));
  EXPECT_TRUE(loqt::bitwise_equal(a, c));
}

TEST(MatrixTest, MatmulShapeMismatchNamesBothShapes) {
  const Matrix a(2, 3);
  const Matrix b(4, 2);
  try {
    loqt::matmul(a, b);
    FAIL() << "expected shape mismatch";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x2"), std::string::npos) << msg;
  }
}

TEST(MatrixTest, AddShapeMismatchNamesBothShapes) {
  try {
    loqt::add(Matrix(2, 2), Matrix(3, 2));
    FAIL() << "expected shape mismatch";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3x2"), std::string::npos) << msg;
  }
}

TEST(MatrixTest, TransposeValuesAndRoundTrip) {
  const Matrix a = from_values(2, 3, {1, 2, 3, 4, 5, 6});
  const Matrix t = loqt::transpose(a);
  ASSERT_EQ(t.rows, 3u);
  ASSERT_EQ(t.cols, 2u);
  EXPECT_FLOAT_EQ(t(0, 1), 4.0f);
  EXPECT_FLOAT_EQ(t(2, 0), 3.0f);
  EXPECT_TRUE(loqt::bitwise_equal(loqt::transpose(t), a));
}

TEST(MatrixTest, MatmulTnMatchesExplicitTranspose) {
  loqt::Rng rng(7);
  const Matrix a = loqt::randn(6, 4, rng);
  const Matrix b = loqt::randn(6, 5, rng);
  const Matrix direct = loqt::matmul_tn(a, b);
  const Matrix reference = loqt::matmul(loqt::transpose(a), b);
  EXPECT_LE(max_abs_diff(direct, reference), 1e-6f);
}

TEST(MatrixTest, MatmulNtMatchesExplicitTranspose) {
  loqt::Rng rng(8);
  const Matrix a = loqt::randn(3, 7, rng);
  const Matrix b = loqt::randn(4, 7, rng);
  const Matrix direct = loqt::matmul_nt(a, b);
  const Matrix reference = loqt::matmul(a, loqt::transpose(b));
  EXPECT_LE(max_abs_diff(direct, reference), 1e-6f);
}

TEST(MatrixTest, ElementwiseArithmetic) {
  const Matrix a = from_values(2, 2, {1, 2, 3, 4});
  const Matrix b = from_values(2, 2, {10, 20, 30, 40});
  const Matrix sum = loqt::add(a, b);
  const Matrix diff = loqt::sub(b, a);
  const Matrix scaled = loqt::scale(a, 2.0f);
  EXPECT_FLOAT_EQ(sum(1, 1), 44.0f);
  EXPECT_FLOAT_EQ(diff(0, 1), 18.0f);
  EXPECT_FLOAT_EQ(scaled(1, 0), 6.0f);

  Matrix acc = a;
  loqt::add_scaled(acc, b, 0.5f);
  EXPECT_FLOAT_EQ(acc(0, 0), 6.0f);
  EXPECT_FLOAT_EQ(acc(1, 1), 24.0f);
}

TEST(MatrixTest, FrobeniusNorm) {
  EXPECT_DOUBLE_EQ(loqt::frobenius_norm(Matrix(3, 4)), 0.0);
  const Matrix a = from_values(2, 1, {3, 4});
  EXPECT_DOUBLE_EQ(loqt::frobenius_norm(a), 5.0);
  EXPECT_DOUBLE_EQ(loqt::frobenius_distance(a, Matrix(2, 1)), 5.0);
}

TEST(MatrixTest, MaxAbsAndFiniteness) {
  Matrix a = from_values(2, 2, {1, -7, 3, 0});
  EXPECT_FLOAT_EQ(loqt::max_abs(a), 7.0f);
  EXPECT_TRUE(loqt::all_finite(a));
  a(0, 1) = std::numeric_limits<float>::infinity();
  EXPECT_FALSE(loqt::all_finite(a));
  a(0, 1) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(loqt::all_finite(a));
}

TEST(MatrixTest, RandnIsDeterministicPerSeed) {
  loqt::Rng rng_a(42);
  loqt::Rng rng_b(42);
  const Matrix a = loqt::randn(4, 3, rng_a);
  const Matrix b = loqt::randn(4, 3, rng_b);
  EXPECT_TRUE(loqt::bitwise_equal(a, b));

  loqt::Rng rng_c(43);
  const Matrix c = loqt::randn(4, 3, rng_c);
  EXPECT_FALSE(loqt::bitwise_equal(a, c));
}

TEST(MatrixTest, RngRestoreReplaysStream) {
  loqt::Rng rng(97);
  for (int i = 0; i < 11; ++i) rng.normal();
  const std::uint64_t mark = rng.draw_count();
  std::vector<double> expected;
  for (int i = 0; i < 5; ++i) expected.push_back(rng.normal());

  loqt::Rng fresh(1);
  fresh.restore(97, mark);
  for (int i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(fresh.normal(), expected[static_cast<std::size_t>(i)]);
  }
}

TEST(MatrixTest, MatmulRepeatsBitwise) {
  loqt::Rng rng(11);
  const Matrix a = loqt::randn(9, 17, rng);
  const Matrix b = loqt::randn(17, 13, rng);
  const Matrix first = loqt::matmul(a, b);
  const Matrix second = loqt::matmul(a, b);
  EXPECT_TRUE(loqt::bitwise_equal(first, second));
}

}  // namespace
