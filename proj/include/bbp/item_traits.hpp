#pragma once

#include <concepts>
#include <cstring>
#include <limits>
#include <type_traits>

namespace bbp {

template <class T>
concept PageItem = std::is_trivially_copyable_v<T> && std::is_default_constructible_v<T>;

// Value handed out for reads of data that is not present yet. The step that
// observed it is discarded, so the value only has to be recognisable.
template <class T>
T poison_value() {
  if constexpr (std::is_floating_point_v<T>) {
    return std::numeric_limits<T>::quiet_NaN();
  } else if constexpr (std::is_integral_v<T>) {
    return std::numeric_limits<T>::max();
  } else if constexpr (requires { { T::poison() } -> std::convertible_to<T>; }) {
    return T::poison();
  } else {
    T t;
    std::memset(static_cast<void*>(&t), 0xff, sizeof(T));
    return t;
  }
}

}  // namespace bbp
