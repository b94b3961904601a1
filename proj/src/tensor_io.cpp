#include "expnet/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace expnet {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos, const std::string& origin) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error(origin + ": truncated tensor file");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

template <typename Scalar>
std::string encode_tensor(const Tensor<Scalar>& tensor) {
  std::string out = "EXPT";
  put<std::uint32_t>(out, kTensorFileVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
  for (Index e : tensor.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(e));
  out.reserve(out.size() + static_cast<std::size_t>(tensor.size()) * 4);
  for (Index i = 0; i < tensor.size(); ++i) put<float>(out, static_cast<float>(tensor[i]));
  return out;
}

template <typename Scalar>
void write_tensor(const std::filesystem::path& path, const Tensor<Scalar>& tensor) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_tensor(tensor);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

template <typename Scalar>
Tensor<Scalar> decode_tensor(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "EXPT") != 0) throw std::runtime_error(origin + ": bad magic, not a tensor file");
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos, origin);
  if (version != kTensorFileVersion)
    throw std::runtime_error(origin + ": unsupported tensor file version " + std::to_string(version));
  const auto rank = take<std::uint32_t>(bytes, pos, origin);
  if (rank == 0 || rank > 16) throw std::runtime_error(origin + ": implausible rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(take<std::uint64_t>(bytes, pos, origin)));
  const Index n = shape_size(shape);
  if (bytes.size() - pos != static_cast<std::size_t>(n) * 4)
    throw std::runtime_error(origin + ": payload size does not match shape " + shape_string(shape));
  Array<Scalar> values(n);
  for (Index i = 0; i < n; ++i) values[i] = static_cast<Scalar>(take<float>(bytes, pos, origin));
  return Tensor<Scalar>(std::move(shape), std::move(values));
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

template <typename Scalar>
Tensor<Scalar> read_tensor(const std::filesystem::path& path) {
  return decode_tensor<Scalar>(read_file_bytes(path), path.string());
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template std::string encode_tensor(const Tensor<float>&);
template std::string encode_tensor(const Tensor<double>&);
template void write_tensor(const std::filesystem::path&, const Tensor<float>&);
template void write_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> decode_tensor(const std::string&, const std::string&);
template Tensor<double> decode_tensor(const std::string&, const std::string&);
template Tensor<float> read_tensor(const std::filesystem::path&);
template Tensor<double> read_tensor(const std::filesystem::path&);

}  // namespace expnet
